"""Model-parallel Fourier neural operator: encoder, spectral blocks, decoder.

The input tensor is partitioned along x.  Each block computes the FFT along
the non-partitioned dims (y, z, t), truncates them, re-partitions x -> ky,
finishes the transform along x, truncates it, multiplies the ky-sharded
spectral weights, and walks the same chain back with inverse transforms --
exactly two re-partition events per block forward.  Encoder and decoder mix
channels point-wise, so their weights are only broadcast, never re-partitioned.

Backward is reverse-mode through the adjoints of every linear stage: the
adjoint of the unnormalized forward FFT is N * ifft, of the 1/N inverse is
fft / N, of truncation is zero-padding, of a re-partition is the reverse
re-partition, and of broadcast is sum-reduction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .comm import Communicator
from .errors import DimensionMismatchError, InfeasiblePartitionError
from .partition import Partition
from .spectral import ModeSpec, fft_dims, ifft_dims, pad_modes, retained_extent, truncate_modes
from .tensor import DenseTensor, DimLabel, DType, einsum_channel_mix, einsum_spectral

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ActivationKind(str, enum.Enum):
    RELU = "relu"
    GELU = "gelu"
    IDENTITY = "identity"

    def apply(self, h: np.ndarray) -> np.ndarray:
        if self is ActivationKind.RELU:
            return np.maximum(h, 0)
        if self is ActivationKind.GELU:
            return 0.5 * h * (1.0 + erf(h * _INV_SQRT2))
        return h.copy()

    def derivative(self, h: np.ndarray) -> np.ndarray:
        if self is ActivationKind.RELU:
            return (h > 0).astype(h.dtype)
        if self is ActivationKind.GELU:
            return 0.5 * (1.0 + erf(h * _INV_SQRT2)) + h * _INV_SQRT2PI * np.exp(
                -0.5 * h * h
            )
        return np.ones_like(h)


_YZT_PHYS = (DimLabel.Y, DimLabel.Z, DimLabel.T)
_YZT_SPEC = (DimLabel.KY, DimLabel.KZ, DimLabel.KT)


@dataclass(frozen=True)
class FnoConfig:
    nx: int
    ny: int
    nz: int
    nt: int
    in_channels: int
    out_channels: int
    hidden_channels: int
    modes: ModeSpec
    num_blocks: int = 4
    activation: ActivationKind = ActivationKind.GELU
    dtype: DType = DType.REAL64
    num_ranks: int = 1

    def __post_init__(self):
        object.__setattr__(self, "activation", ActivationKind(self.activation))
        object.__setattr__(self, "dtype", DType(self.dtype))
        if self.dtype not in (DType.REAL32, DType.REAL64):
            raise DimensionMismatchError("model I/O dtype must be real32 or real64")
        if self.num_blocks < 1:
            raise DimensionMismatchError("need at least one block")
        for name in ("nx", "ny", "nz", "nt", "in_channels", "out_channels",
                     "hidden_channels", "num_ranks"):
            if getattr(self, name) < 1:
                raise DimensionMismatchError(f"{name} must be positive")
        if self.num_ranks > self.nx:
            raise InfeasiblePartitionError(
                f"{self.num_ranks} ranks cannot partition x of extent {self.nx}"
            )
        if self.num_ranks > self.retained_y:
            raise InfeasiblePartitionError(
                f"{self.num_ranks} ranks cannot partition the retained ky extent "
                f"{self.retained_y} (ny={self.ny}, my={self.modes.count(DimLabel.KY)})"
            )

    # -- derived quantities --

    @property
    def grid(self) -> tuple[int, int, int, int]:
        return (self.nx, self.ny, self.nz, self.nt)

    @property
    def retained_x(self) -> int:
        return retained_extent(self.nx, self.modes.count(DimLabel.KX))

    @property
    def retained_y(self) -> int:
        return retained_extent(self.ny, self.modes.count(DimLabel.KY))

    @property
    def retained_z(self) -> int:
        return retained_extent(self.nz, self.modes.count(DimLabel.KZ))

    @property
    def retained_t(self) -> int:
        return retained_extent(self.nt, self.modes.count(DimLabel.KT))

    @property
    def complex_dtype(self) -> DType:
        return DType.COMPLEX64 if self.dtype == DType.REAL32 else DType.COMPLEX128

    def x_partition(self) -> Partition:
        return Partition.block(DimLabel.X, self.nx, self.num_ranks)

    def ky_partition(self) -> Partition:
        return Partition.block(DimLabel.KY, self.retained_y, self.num_ranks)

    def spectral_weight_shape(self) -> tuple[int, ...]:
        c = self.hidden_channels
        return (c, c, self.retained_x, self.retained_y, self.retained_z, self.retained_t)


@dataclass(frozen=True)
class FnoParams:
    """Encoder/decoder channel mixers plus per-block spectral weights.

    ``blocks`` hold either the full global weights or one rank's ky-shard;
    ``sharded`` says which.  Encoder/decoder weights are always replicated.
    """

    we: DenseTensor
    wd: DenseTensor
    blocks: tuple[DenseTensor, ...]
    sharded: bool = False

    def named(self) -> dict[str, DenseTensor]:
        out = {"we": self.we, "wd": self.wd}
        for i, w in enumerate(self.blocks):
            out[f"block{i}"] = w
        return out


def init_params(config: FnoConfig, seed: int) -> FnoParams:
    """Global (unsharded) parameters, identical for every rank count.

    Channel mixers are Glorot-uniform; spectral weights have each real
    component uniform on [0, 1) scaled by 1/(c_i*c_o).
    """
    rng = np.random.default_rng(seed)
    c = self_c = config.hidden_channels
    real = config.dtype.np_dtype
    cplx = config.complex_dtype.np_dtype

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(real)

    we = DenseTensor((DimLabel.C, DimLabel.CO), glorot(config.in_channels, c))
    wd = DenseTensor((DimLabel.C, DimLabel.CO), glorot(c, config.out_channels))
    shape = config.spectral_weight_shape()
    scale = 1.0 / (self_c * self_c)
    blocks = []
    labels = (DimLabel.C, DimLabel.CO, DimLabel.KX, DimLabel.KY, DimLabel.KZ, DimLabel.KT)
    for _ in range(config.num_blocks):
        re = rng.random(size=shape)
        im = rng.random(size=shape)
        blocks.append(DenseTensor(labels, (scale * (re + 1j * im)).astype(cplx)))
    return FnoParams(we, wd, tuple(blocks), sharded=False)


def shard_params(params: FnoParams, config: FnoConfig, rank: int) -> FnoParams:
    """This rank's view: spectral weights sliced to its ky block."""
    if params.sharded:
        raise DimensionMismatchError("parameters are already sharded")
    rng = config.ky_partition().range_of(rank)
    blocks = []
    for w in params.blocks:
        axis = w.axis(DimLabel.KY)
        index = [slice(None)] * w.data.ndim
        index[axis] = rng.as_slice()
        blocks.append(DenseTensor(w.labels, w.data[tuple(index)]))
    return FnoParams(params.we, params.wd, tuple(blocks), sharded=True)


# ---------------------------------------------------------------------------
# Communication volume accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CommVolume:
    """Exact off-rank element counts for the block's re-partitions, summed
    over ranks.  The x->ky move and its adjoint carry identical volume."""

    per_repartition_elements: int
    per_block_elements: int          # two re-partition events per block forward
    per_forward_elements: int        # 2 * num_blocks events
    naive_per_repartition_elements: int
    reduction_ratio: float
    bytes_per_element: int

    @property
    def per_repartition_bytes(self) -> int:
        return self.per_repartition_elements * self.bytes_per_element

    @property
    def per_block_bytes(self) -> int:
        return self.per_block_elements * self.bytes_per_element

    @property
    def per_forward_bytes(self) -> int:
        return self.per_forward_elements * self.bytes_per_element


def _off_rank_elements(src: Partition, dst: Partition, per_pair: int) -> int:
    total = 0
    for rank in range(src.num_ranks):
        total += src.extent_of(rank) * (dst.global_extent - dst.extent_of(rank))
    return total * per_pair


def predicted_block_volume(config: FnoConfig, batch_size: int = 1) -> CommVolume:
    """Elements each re-partition moves off-rank, plus the untruncated
    baseline and the volume-reduction ratio from frequency truncation.

    With evenly divisible extents the truncated count reduces to the closed
    form b*c*Nx*ry*rz*rt*(P-1)/P; the sum below is exact in every case.
    """
    c = config.hidden_channels
    xpart = config.x_partition()
    kypart = config.ky_partition()
    per_pair = batch_size * c * config.retained_z * config.retained_t
    truncated = _off_rank_elements(xpart, kypart, per_pair)

    ypart = Partition.block(DimLabel.Y, config.ny, config.num_ranks)
    naive = _off_rank_elements(
        xpart, ypart, batch_size * c * config.nz * config.nt
    )
    ratio = (config.ny * config.nz * config.nt) / (
        config.retained_y * config.retained_z * config.retained_t
    )
    return CommVolume(
        per_repartition_elements=truncated,
        per_block_elements=2 * truncated,
        per_forward_elements=2 * config.num_blocks * truncated,
        naive_per_repartition_elements=naive,
        reduction_ratio=ratio,
        bytes_per_element=config.complex_dtype.itemsize,
    )


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


@dataclass
class BlockCache:
    spec_in: DenseTensor            # input of the spectral multiply (ky shard)
    pre_activation: DenseTensor     # block output before the outer activation


@dataclass
class ForwardCache:
    x_in: Optional[DenseTensor] = None
    enc_w: Optional[DenseTensor] = None
    enc_pre: Optional[DenseTensor] = None
    acts: list = field(default_factory=list)      # a0 .. aL (post-activation)
    blocks: list = field(default_factory=list)    # BlockCache per block
    dec_w: Optional[DenseTensor] = None
    dec_pre: Optional[DenseTensor] = None


def _mix_layer_forward(comm, x, w, activation, label):
    w_used = comm.broadcast(w, root=0, label=label)
    pre = einsum_channel_mix(x, w_used)
    return DenseTensor(pre.labels, activation.apply(pre.data)), pre, w_used


def encoder_forward(
    comm: Communicator, x_local: DenseTensor, we: DenseTensor,
    activation: ActivationKind = ActivationKind.GELU,
) -> DenseTensor:
    """Broadcast the encoder weights and mix channels rank-locally."""
    out, _, _ = _mix_layer_forward(comm, x_local, we, activation, "encoder")
    return out


def decoder_forward(
    comm: Communicator, x_local: DenseTensor, wd: DenseTensor,
    activation: ActivationKind = ActivationKind.GELU,
) -> DenseTensor:
    out, _, _ = _mix_layer_forward(comm, x_local, wd, activation, "decoder")
    return out


def fno_block_forward(
    comm: Communicator,
    x_local: DenseTensor,
    w_shard: DenseTensor,
    config: FnoConfig,
    label: str = "block",
    cache: Optional[BlockCache] = None,
) -> DenseTensor:
    """One distributed spectral block (without the outer activation).

    FFT(yzt) -> truncate(yzt) -> repartition x->ky -> FFT(x) -> truncate(kx)
    -> spectral multiply -> pad(kx) -> iFFT(kx) -> repartition ky->x
    -> pad(yzt) -> iFFT(yzt) -> real part.
    """
    yzt_spec = config.modes.restrict(_YZT_SPEC)
    x_spec = config.modes.restrict((DimLabel.KX,))
    xpart = config.x_partition()
    kypart = config.ky_partition()

    z = fft_dims(x_local, _YZT_PHYS)
    z = truncate_modes(z, yzt_spec)
    z = comm.repartition(z, xpart, kypart, label=f"{label}.fwd.x->ky")
    z = fft_dims(z, (DimLabel.X,))
    z = truncate_modes(z, x_spec)
    spec_in = z
    z = einsum_spectral(z, w_shard)
    z = pad_modes(z, x_spec, {DimLabel.KX: config.nx})
    z = ifft_dims(z, (DimLabel.KX,))
    z = comm.repartition(z, kypart, xpart, label=f"{label}.fwd.ky->x")
    z = pad_modes(
        z, yzt_spec,
        {DimLabel.KY: config.ny, DimLabel.KZ: config.nz, DimLabel.KT: config.nt},
    )
    z = ifft_dims(z, _YZT_SPEC)
    out = DenseTensor(z.labels, np.ascontiguousarray(z.data.real))
    if cache is not None:
        cache.spec_in = spec_in
        cache.pre_activation = out
    return out


def fno_forward(
    comm: Communicator,
    x_local: DenseTensor,
    params: FnoParams,
    config: FnoConfig,
    cache: Optional[ForwardCache] = None,
) -> DenseTensor:
    """Full distributed forward pass on this rank's x slab."""
    want = cache is not None
    act = config.activation
    if want:
        cache.x_in = x_local
        cache.acts = []
        cache.blocks = []
    a, enc_pre, enc_w = _mix_layer_forward(comm, x_local, params.we, act, "encoder")
    if want:
        cache.enc_pre = enc_pre
        cache.enc_w = enc_w
        cache.acts.append(a)
    for i, w_shard in enumerate(params.blocks):
        bcache = BlockCache(None, None) if want else None
        pre = fno_block_forward(comm, a, w_shard, config, label=f"block{i}", cache=bcache)
        a = DenseTensor(pre.labels, act.apply(pre.data))
        if want:
            cache.blocks.append(bcache)
            cache.acts.append(a)
    y, dec_pre, dec_w = _mix_layer_forward(comm, a, params.wd, act, "decoder")
    if want:
        cache.dec_pre = dec_pre
        cache.dec_w = dec_w
    return y


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FnoGrads:
    """Gradients matching FnoParams: we/wd are reduce-summed over ranks and
    re-broadcast (identical on every rank); block grads are this rank's
    ky-shard and need no communication."""

    we: DenseTensor
    wd: DenseTensor
    blocks: tuple[DenseTensor, ...]

    def named(self) -> dict[str, DenseTensor]:
        out = {"we": self.we, "wd": self.wd}
        for i, w in enumerate(self.blocks):
            out[f"block{i}"] = w
        return out


def _mix_weight_grad(x: DenseTensor, g: DenseTensor) -> np.ndarray:
    return np.einsum("bi...,bo...->io", x.data, g.data, optimize=True)


def _mix_input_grad(g: DenseTensor, w: DenseTensor) -> DenseTensor:
    out = np.tensordot(g.data, w.data, axes=([1], [1]))
    out = np.moveaxis(out, -1, 1)
    return DenseTensor(g.labels, np.ascontiguousarray(out))


def _spectral_weight_grad(spec_in: DenseTensor, g: DenseTensor) -> np.ndarray:
    return np.einsum(
        "bi...,bo...->io...", np.conj(spec_in.data), g.data, optimize=True
    )


def _spectral_input_grad(g: DenseTensor, w: DenseTensor) -> DenseTensor:
    out = np.einsum("bo...,io...->bi...", g.data, np.conj(w.data), optimize=True)
    return DenseTensor(g.labels, np.ascontiguousarray(out))


def fno_block_backward(
    comm: Communicator,
    g: DenseTensor,
    w_shard: DenseTensor,
    spec_in: DenseTensor,
    config: FnoConfig,
    label: str = "block",
) -> tuple[DenseTensor, DenseTensor]:
    """Adjoint chain of fno_block_forward.

    Returns (gradient w.r.t. the block input, gradient w.r.t. the weight
    shard).  The weight gradient is rank-local by construction.
    """
    yzt_spec = config.modes.restrict(_YZT_SPEC)
    x_spec = config.modes.restrict((DimLabel.KX,))
    xpart = config.x_partition()
    kypart = config.ky_partition()
    n_yzt = config.ny * config.nz * config.nt

    d = DenseTensor(g.labels, g.data.astype(config.complex_dtype.np_dtype))
    d = fft_dims(d, _YZT_PHYS)                       # adjoint of ifft_yzt
    d = DenseTensor(d.labels, d.data * (1.0 / n_yzt))
    d = truncate_modes(d, yzt_spec)                  # adjoint of pad_yzt
    d = comm.repartition(d, xpart, kypart, label=f"{label}.bwd.x->ky")
    d = fft_dims(d, (DimLabel.X,))                   # adjoint of ifft_kx
    d = DenseTensor(d.labels, d.data * (1.0 / config.nx))
    d = truncate_modes(d, x_spec)                    # adjoint of pad_kx
    gw = _spectral_weight_grad(spec_in, d)
    d = _spectral_input_grad(d, w_shard)
    d = pad_modes(d, x_spec, {DimLabel.KX: config.nx})  # adjoint of truncate_kx
    d = ifft_dims(d, (DimLabel.KX,))                 # adjoint of fft_x, scaled N
    d = DenseTensor(d.labels, d.data * float(config.nx))
    d = comm.repartition(d, kypart, xpart, label=f"{label}.bwd.ky->x")
    d = pad_modes(
        d, yzt_spec,
        {DimLabel.KY: config.ny, DimLabel.KZ: config.nz, DimLabel.KT: config.nt},
    )
    d = ifft_dims(d, _YZT_SPEC)                      # adjoint of fft_yzt, scaled N
    gx = DenseTensor(d.labels, np.ascontiguousarray(d.data.real * float(n_yzt)))
    return gx, DenseTensor(w_shard.labels, gw)


def fno_backward(
    comm: Communicator,
    g_local: DenseTensor,
    params: FnoParams,
    config: FnoConfig,
    cache: ForwardCache,
) -> tuple[DenseTensor, FnoGrads]:
    """Reverse-mode gradients from the upstream output gradient.

    Spectral-weight gradients stay rank-local; encoder/decoder gradients are
    reduce-summed to root (adjoint of broadcast) and re-broadcast so every
    rank returns the identical replicated value.
    """
    act = config.activation
    a_last = cache.acts[-1]

    g = DenseTensor(g_local.labels, g_local.data * act.derivative(cache.dec_pre.data))
    gwd_local = _mix_weight_grad(a_last, g)
    g = _mix_input_grad(g, cache.dec_w)

    block_grads: list[Optional[DenseTensor]] = [None] * len(params.blocks)
    for i in reversed(range(len(params.blocks))):
        bcache = cache.blocks[i]
        g = DenseTensor(g.labels, g.data * act.derivative(bcache.pre_activation.data))
        g, gw = fno_block_backward(
            comm, g, params.blocks[i], bcache.spec_in, config, label=f"block{i}"
        )
        block_grads[i] = gw

    g = DenseTensor(g.labels, g.data * act.derivative(cache.enc_pre.data))
    gwe_local = _mix_weight_grad(cache.x_in, g)
    gx = _mix_input_grad(g, cache.enc_w)

    gwe = comm.reduce_sum(
        DenseTensor(params.we.labels, gwe_local), root=0, label="bwd.we"
    )
    gwd = comm.reduce_sum(
        DenseTensor(params.wd.labels, gwd_local), root=0, label="bwd.wd"
    )
    gwe = comm.broadcast(gwe if comm.rank == 0 else None, root=0, label="bwd.we.re")
    gwd = comm.broadcast(gwd if comm.rank == 0 else None, root=0, label="bwd.wd.re")
    return gx, FnoGrads(gwe, gwd, tuple(block_grads))


def slice_local(x_global: DenseTensor, part: Partition, rank: int) -> DenseTensor:
    """This rank's slab of a globally assembled tensor."""
    axis = x_global.axis(part.dim)
    index = [slice(None)] * x_global.data.ndim
    index[axis] = part.range_of(rank).as_slice()
    return DenseTensor(x_global.labels, x_global.data[tuple(index)])
