"""Rank-local spectral building blocks: labeled multi-dimensional FFTs,
symmetric low-frequency truncation, and its zero-padding adjoint.

Convention, used everywhere including backward passes: the forward transform
is unnormalized and the inverse carries the full 1/N factor per transformed
dimension, so ifft(fft(x)) == x.  The adjoint of the forward transform is
therefore N * ifft (the unnormalized conjugate transform), and the adjoint of
the inverse is fft / N.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatchError, ShapeMismatchError, UnknownLabelError
from .tensor import (
    SPATIAL_TO_SPECTRAL,
    SPECTRAL_LABELS,
    SPECTRAL_TO_SPATIAL,
    DenseTensor,
    DimLabel,
    as_label,
)


def fft_dims(x: DenseTensor, dims: Iterable["DimLabel | str"]) -> DenseTensor:
    """Unnormalized forward FFT along the given physical dims (x -> kx etc.)."""
    labels = [as_label(d) for d in dims]
    for label in labels:
        if label not in SPATIAL_TO_SPECTRAL:
            raise UnknownLabelError(f"cannot Fourier-transform dimension {label.value!r}")
    axes = [x.axis(label) for label in labels]
    out = np.fft.fftn(x.data, axes=axes)
    return DenseTensor(
        [SPATIAL_TO_SPECTRAL.get(l, l) if l in labels else l for l in x.labels], out
    )


def ifft_dims(x: DenseTensor, dims: Iterable["DimLabel | str"]) -> DenseTensor:
    """Inverse FFT along the given spectral dims (kx -> x etc.), 1/N scaled."""
    labels = [as_label(d) for d in dims]
    for label in labels:
        if label not in SPECTRAL_TO_SPATIAL:
            raise UnknownLabelError(f"cannot inverse-transform dimension {label.value!r}")
    axes = [x.axis(label) for label in labels]
    out = np.fft.ifftn(x.data, axes=axes)
    return DenseTensor(
        [SPECTRAL_TO_SPATIAL.get(l, l) if l in labels else l for l in x.labels], out
    )


def retained_extent(full_extent: int, mode_count: int) -> int:
    return min(2 * mode_count, full_extent)


def retained_indices(full_extent: int, mode_count: int) -> np.ndarray:
    """Indices kept along one dimension: the m lowest positive-side modes
    followed by the m highest (negative-side) ones; identity when 2m >= N."""
    if 2 * mode_count >= full_extent:
        return np.arange(full_extent)
    return np.concatenate(
        [np.arange(mode_count), np.arange(full_extent - mode_count, full_extent)]
    )


@dataclass(frozen=True)
class ModeSpec:
    """Retained mode counts keyed by spectral dimension label."""

    counts: Mapping[DimLabel, int]

    def __post_init__(self):
        counts = {as_label(k): int(v) for k, v in dict(self.counts).items()}
        for label, m in counts.items():
            if label not in SPECTRAL_LABELS:
                raise UnknownLabelError(f"{label.value!r} is not a spectral dimension")
            if m < 1:
                raise DimensionMismatchError(f"mode count for {label.value} must be >= 1")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def of_xyzt(cls, mx: int, my: int, mz: int, mt: int) -> "ModeSpec":
        return cls({DimLabel.KX: mx, DimLabel.KY: my, DimLabel.KZ: mz, DimLabel.KT: mt})

    def labels(self) -> tuple[DimLabel, ...]:
        return tuple(self.counts)

    def count(self, label: "DimLabel | str") -> int:
        return self.counts[as_label(label)]

    def restrict(self, labels: Iterable["DimLabel | str"]) -> "ModeSpec":
        wanted = {as_label(l) for l in labels}
        return ModeSpec({l: m for l, m in self.counts.items() if l in wanted})

    def retained(self, label: "DimLabel | str", full_extent: int) -> int:
        return retained_extent(full_extent, self.count(label))


def _open_mesh(shape: Sequence[int], axis_indices: dict[int, np.ndarray]):
    """np.ix_ mesh selecting ``axis_indices`` on some axes, everything else."""
    per_axis = [
        axis_indices.get(axis, np.arange(extent)) for axis, extent in enumerate(shape)
    ]
    return np.ix_(*per_axis)


def truncate_modes(x: DenseTensor, spec: ModeSpec) -> DenseTensor:
    """Keep the symmetric low-frequency block along every spec dimension."""
    picks = {}
    for label in spec.labels():
        axis = x.axis(label)
        picks[axis] = retained_indices(x.shape[axis], spec.count(label))
    out = x.data[_open_mesh(x.shape, picks)]
    return DenseTensor(x.labels, out)


def pad_modes(
    x: DenseTensor, spec: ModeSpec, full_extents: Mapping["DimLabel | str", int]
) -> DenseTensor:
    """Scatter retained modes back to their original indices, zeros elsewhere.

    Exact adjoint of truncate_modes with the same spec and extents.
    """
    full = {as_label(k): int(v) for k, v in dict(full_extents).items()}
    shape = list(x.shape)
    picks = {}
    for label in spec.labels():
        axis = x.axis(label)
        if label not in full:
            raise ShapeMismatchError(f"no original extent given for {label.value!r}")
        n_full = full[label]
        expected = retained_extent(n_full, spec.count(label))
        if x.shape[axis] != expected:
            raise ShapeMismatchError(
                f"dim {label.value!r}: truncated extent {x.shape[axis]} does not match "
                f"retained size {expected} for full extent {n_full}"
            )
        shape[axis] = n_full
        picks[axis] = retained_indices(n_full, spec.count(label))
    out = np.zeros(shape, dtype=x.data.dtype)
    out[_open_mesh(shape, picks)] = x.data
    return DenseTensor(x.labels, out)
