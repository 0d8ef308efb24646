import numpy as np
import pytest

from distfno.errors import ShapeMismatchError, UnknownLabelError
from distfno.spectral import (
    ModeSpec,
    fft_dims,
    ifft_dims,
    pad_modes,
    retained_extent,
    retained_indices,
    truncate_modes,
)
from distfno.tensor import DenseTensor, DimLabel


def rand_c(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestFft:
    def test_delta_gives_constant_spectrum(self):
        x = np.zeros(8)
        x[0] = 1.0
        spec = fft_dims(DenseTensor(("x",), x), ("x",))
        assert spec.labels == (DimLabel.KX,)
        assert np.max(np.abs(spec.data - 1.0)) < 1e-14

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        x = DenseTensor(("b", "x", "y"), rand_c(rng, (2, 8, 6)))
        back = ifft_dims(fft_dims(x, ("x", "y")), ("kx", "ky"))
        scale = np.max(np.abs(x.data))
        assert np.max(np.abs(back.data - x.data)) / scale < 1e-12
        assert back.labels == x.labels

    def test_parseval_one_dim(self):
        rng = np.random.default_rng(1)
        x = rand_c(rng, (16,))
        spec = fft_dims(DenseTensor(("x",), x), ("x",))
        lhs = np.sum(np.abs(x) ** 2)
        rhs = np.sum(np.abs(spec.data) ** 2) / 16
        assert abs(lhs - rhs) / lhs < 1e-12

    def test_real_input_promotes_to_complex(self):
        x = DenseTensor(("x",), np.ones(4))
        assert fft_dims(x, ("x",)).dtype.value == "complex128"
        x32 = DenseTensor(("x",), np.ones(4, dtype=np.float32))
        assert fft_dims(x32, ("x",)).dtype.value == "complex64"

    def test_unknown_labels(self):
        x = DenseTensor(("b", "x"), np.zeros((2, 4)))
        with pytest.raises(UnknownLabelError):
            fft_dims(x, ("b",))
        with pytest.raises(UnknownLabelError):
            ifft_dims(fft_dims(x, ("x",)), ("x",))

    def test_adjoint_is_scaled_inverse(self):
        # <F x, y> == <x, N * ifft(y)> under the conjugating inner product
        rng = np.random.default_rng(2)
        for trial in range(20):
            x = rand_c(rng, (8, 5))
            y = rand_c(rng, (8, 5))
            fx = fft_dims(DenseTensor(("x", "y"), x), ("x", "y")).data
            adj = ifft_dims(DenseTensor(("kx", "ky"), y), ("kx", "ky")).data * 40
            lhs, rhs = np.vdot(fx, y), np.vdot(x, adj)
            assert abs(lhs - rhs) / abs(lhs) < 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x1, x2 = rand_c(rng, (6,)), rand_c(rng, (6,))
        a = 2.0 - 0.5j
        lhs = fft_dims(DenseTensor(("x",), a * x1 + x2), ("x",)).data
        rhs = a * fft_dims(DenseTensor(("x",), x1), ("x",)).data \
            + fft_dims(DenseTensor(("x",), x2), ("x",)).data
        assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)) < 1e-12


class TestModeSpec:
    def test_retained_indices_n8_m2(self):
        assert retained_indices(8, 2).tolist() == [0, 1, 6, 7]

    def test_oversized_modes_degrade_to_identity(self):
        assert retained_indices(6, 3).tolist() == [0, 1, 2, 3, 4, 5]
        assert retained_extent(6, 5) == 6

    def test_retained_extent(self):
        assert retained_extent(16, 4) == 8
        assert retained_extent(8, 3) == 6

    def test_only_spectral_labels(self):
        with pytest.raises(UnknownLabelError):
            ModeSpec({DimLabel.X: 2})

    def test_restrict(self):
        spec = ModeSpec.of_xyzt(1, 2, 3, 4)
        sub = spec.restrict((DimLabel.KY, DimLabel.KT))
        assert sub.labels() == (DimLabel.KY, DimLabel.KT)
        assert sub.count("ky") == 2 and sub.count("kt") == 4


class TestTruncatePad:
    def test_truncation_keeps_symmetric_block(self):
        rng = np.random.default_rng(4)
        x = rand_c(rng, (3, 8))
        out = truncate_modes(
            DenseTensor(("b", "ky"), x), ModeSpec({DimLabel.KY: 2})
        )
        assert np.array_equal(out.data, x[:, [0, 1, 6, 7]])

    def test_oversized_is_identity(self):
        rng = np.random.default_rng(5)
        x = DenseTensor(("ky",), rand_c(rng, (6,)))
        out = truncate_modes(x, ModeSpec({DimLabel.KY: 4}))
        assert np.array_equal(out.data, x.data)

    def test_truncate_pad_identity_on_truncated_space(self):
        rng = np.random.default_rng(6)
        spec = ModeSpec({DimLabel.KY: 2, DimLabel.KZ: 1})
        y = DenseTensor(("ky", "kz"), rand_c(rng, (4, 2)))
        back = truncate_modes(pad_modes(y, spec, {"ky": 9, "kz": 7}), spec)
        assert np.array_equal(back.data, y.data)

    def test_pad_zeros_stay_zero(self):
        spec = ModeSpec({DimLabel.KY: 2})
        out = pad_modes(
            DenseTensor(("ky",), np.zeros(4, dtype=complex)), spec, {"ky": 10}
        )
        assert out.shape == (10,)
        assert np.all(out.data == 0)

    def test_pad_extent_mismatch(self):
        spec = ModeSpec({DimLabel.KY: 2})
        x = DenseTensor(("ky",), np.zeros(3, dtype=complex))
        with pytest.raises(ShapeMismatchError):
            pad_modes(x, spec, {"ky": 10})

    def test_adjoint_identity(self):
        rng = np.random.default_rng(7)
        spec = ModeSpec({DimLabel.KY: 2, DimLabel.KZ: 2})
        for trial in range(20):
            x = rand_c(rng, (9, 6))
            y = rand_c(rng, (4, 4))
            sx = truncate_modes(DenseTensor(("ky", "kz"), x), spec).data
            sty = pad_modes(DenseTensor(("ky", "kz"), y), spec,
                            {"ky": 9, "kz": 6}).data
            lhs, rhs = np.vdot(sx, y), np.vdot(x, sty)
            assert abs(lhs - rhs) <= 1e-14 * max(abs(lhs), 1.0)

    def test_projection_idempotent_and_self_adjoint(self):
        rng = np.random.default_rng(8)
        spec = ModeSpec({DimLabel.KY: 3})
        full = {"ky": 11}
        x = DenseTensor(("ky",), rand_c(rng, (11,)))
        y = DenseTensor(("ky",), rand_c(rng, (11,)))
        proj = lambda t: pad_modes(truncate_modes(t, spec), spec, full)
        px = proj(x)
        assert np.max(np.abs(proj(px).data - px.data)) < 1e-15
        lhs = np.vdot(px.data, y.data)
        rhs = np.vdot(x.data, proj(y).data)
        assert abs(lhs - rhs) < 1e-12 * max(abs(lhs), 1.0)


class TestCommutation:
    def test_stagewise_equals_all_at_once(self):
        # truncating y,z,t before transforming x changes nothing:
        # S_x F_x S_yzt F_yzt X == S_xyzt F_xyzt X
        rng = np.random.default_rng(9)
        x = DenseTensor(
            ("b", "c", "x", "y", "z", "t"),
            rng.standard_normal((1, 2, 8, 8, 6, 4)),
        )
        spec_yzt = ModeSpec({DimLabel.KY: 2, DimLabel.KZ: 2, DimLabel.KT: 1})
        spec_x = ModeSpec({DimLabel.KX: 2})
        staged = truncate_modes(
            fft_dims(truncate_modes(fft_dims(x, ("y", "z", "t")), spec_yzt), ("x",)),
            spec_x,
        )
        spec_all = ModeSpec.of_xyzt(2, 2, 2, 1)
        direct = truncate_modes(fft_dims(x, ("x", "y", "z", "t")), spec_all)
        assert staged.labels == direct.labels
        scale = np.max(np.abs(direct.data))
        assert np.max(np.abs(staged.data - direct.data)) / scale < 1e-12
