"""Serial reference FNO used as the independent oracle for parity tests.

Implemented directly against numpy with a single undistributed operator
ordering per block -- one full 4-D FFT, one truncation over all four
dimensions at once, the spectral multiply, one zero-pad, one 4-D inverse
FFT -- rather than the staged per-dimension pipeline the distributed code
uses.  Keep it that way: the whole point is that the two paths only agree
because the math does.
"""

from __future__ import annotations

import numpy as np

from .fno import FnoConfig, FnoParams
from .tensor import DenseTensor, DimLabel


def _keep_indices(extent: int, modes: int) -> np.ndarray:
    if 2 * modes >= extent:
        return np.arange(extent)
    return np.r_[0:modes, extent - modes:extent]


def serial_fno_forward(
    x_global: DenseTensor, params: FnoParams, config: FnoConfig
) -> DenseTensor:
    """Undistributed forward pass on the fully assembled input tensor."""
    if params.sharded:
        raise ValueError("the serial oracle needs the full, unsharded weights")
    act = config.activation
    spatial_axes = (2, 3, 4, 5)
    full = (config.nx, config.ny, config.nz, config.nt)
    keep = [
        _keep_indices(n, config.modes.count(k))
        for n, k in zip(full, (DimLabel.KX, DimLabel.KY, DimLabel.KZ, DimLabel.KT))
    ]

    a = np.tensordot(x_global.data, params.we.data, axes=([1], [0]))
    a = act.apply(np.moveaxis(a, -1, 1))

    for w in params.blocks:
        z = np.fft.fftn(a, axes=spatial_axes)
        z = z[
            np.ix_(
                np.arange(z.shape[0]), np.arange(z.shape[1]),
                keep[0], keep[1], keep[2], keep[3],
            )
        ]
        z = np.einsum("bixyzt,ioxyzt->boxyzt", z, w.data, optimize=True)
        padded = np.zeros(z.shape[:2] + full, dtype=z.dtype)
        padded[
            np.ix_(
                np.arange(z.shape[0]), np.arange(z.shape[1]),
                keep[0], keep[1], keep[2], keep[3],
            )
        ] = z
        a = act.apply(np.fft.ifftn(padded, axes=spatial_axes).real)

    y = np.tensordot(a, params.wd.data, axes=([1], [0]))
    y = act.apply(np.moveaxis(y, -1, 1))
    return DenseTensor(x_global.labels, np.ascontiguousarray(y))
