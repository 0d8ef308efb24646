"""Labeled dense tensors, the two contraction patterns of the engine, and the
DTNS binary stream format.

Layout is row-major with the last dimension fastest everywhere; tensors are
immutable after construction and every operation allocates its output.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    DTypeMismatchError,
    MalformedHeaderError,
    TruncatedPayloadError,
    UnknownDTypeError,
    UnknownLabelError,
)


class DimLabel(str, enum.Enum):
    """Dimension labels: batch, channel, three space axes, time, and their
    spectral counterparts.  ``CO`` tags the output-channel dimension of weight
    tensors (weights carry two channel-like dimensions, which must stay
    distinct for labels to be unique within a tensor)."""

    B = "b"
    C = "c"
    X = "x"
    Y = "y"
    Z = "z"
    T = "t"
    KX = "kx"
    KY = "ky"
    KZ = "kz"
    KT = "kt"
    CO = "co"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


# Stable on-disk codes for the DTNS header.
_LABEL_CODE = {
    DimLabel.B: 0, DimLabel.C: 1, DimLabel.X: 2, DimLabel.Y: 3,
    DimLabel.Z: 4, DimLabel.T: 5, DimLabel.KX: 6, DimLabel.KY: 7,
    DimLabel.KZ: 8, DimLabel.KT: 9, DimLabel.CO: 10,
}
_CODE_LABEL = {v: k for k, v in _LABEL_CODE.items()}

SPECTRAL_LABELS = frozenset(
    {DimLabel.KX, DimLabel.KY, DimLabel.KZ, DimLabel.KT}
)

# Physical <-> spectral label pairs used by the FFT wrappers.
SPATIAL_TO_SPECTRAL = {
    DimLabel.X: DimLabel.KX,
    DimLabel.Y: DimLabel.KY,
    DimLabel.Z: DimLabel.KZ,
    DimLabel.T: DimLabel.KT,
}
SPECTRAL_TO_SPATIAL = {v: k for k, v in SPATIAL_TO_SPECTRAL.items()}


def as_label(label: "DimLabel | str") -> DimLabel:
    try:
        return DimLabel(label)
    except ValueError:
        raise UnknownLabelError(f"unknown dimension label {label!r}") from None


class DType(str, enum.Enum):
    REAL32 = "real32"
    REAL64 = "real64"
    COMPLEX64 = "complex64"
    COMPLEX128 = "complex128"

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(_DTYPE_NP[self])

    @property
    def is_complex(self) -> bool:
        return self in (DType.COMPLEX64, DType.COMPLEX128)

    @property
    def itemsize(self) -> int:
        return self.np_dtype.itemsize


_DTYPE_NP = {
    DType.REAL32: "<f4",
    DType.REAL64: "<f8",
    DType.COMPLEX64: "<c8",
    DType.COMPLEX128: "<c16",
}
_DTYPE_CODE = {DType.REAL32: 0, DType.REAL64: 1, DType.COMPLEX64: 2, DType.COMPLEX128: 3}
_CODE_DTYPE = {v: k for k, v in _DTYPE_CODE.items()}
_NP_KIND_TO_DTYPE = {
    ("f", 4): DType.REAL32,
    ("f", 8): DType.REAL64,
    ("c", 8): DType.COMPLEX64,
    ("c", 16): DType.COMPLEX128,
}


def dtype_of(array: np.ndarray) -> DType:
    key = (array.dtype.kind, array.dtype.itemsize)
    if key not in _NP_KIND_TO_DTYPE:
        raise DTypeMismatchError(f"unsupported numpy dtype {array.dtype}")
    return _NP_KIND_TO_DTYPE[key]


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """N-dimensional numeric array with one label per dimension.

    ``data`` is always C-contiguous and marked read-only; construct a new
    tensor instead of mutating.
    """

    labels: tuple[DimLabel, ...]
    data: np.ndarray

    def __init__(self, labels: Iterable["DimLabel | str"], data: np.ndarray):
        labels = tuple(as_label(l) for l in labels)
        if len(set(labels)) != len(labels):
            raise DimensionMismatchError(f"duplicate labels in {labels}")
        arr = np.ascontiguousarray(data)
        if arr.ndim != len(labels):
            raise DimensionMismatchError(
                f"{len(labels)} labels for array of rank {arr.ndim}"
            )
        dtype = dtype_of(arr)  # validates the dtype is one of the four
        if not dtype.is_complex and any(l in SPECTRAL_LABELS for l in labels):
            raise DimensionMismatchError(
                f"spectral labels in a real tensor: {labels}"
            )
        if arr.flags.writeable:
            if arr is data or arr.base is data:
                arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "data", arr)

    # ---- introspection ----

    @property
    def dims(self) -> tuple[tuple[DimLabel, int], ...]:
        return tuple(zip(self.labels, self.data.shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> DType:
        return dtype_of(self.data)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def axis(self, label: "DimLabel | str") -> int:
        label = as_label(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabelError(
                f"tensor has no {label.value!r} dimension (labels {self.labels})"
            ) from None

    def extent(self, label: "DimLabel | str") -> int:
        return self.data.shape[self.axis(label)]

    def relabel(self, mapping: dict[DimLabel, DimLabel]) -> "DenseTensor":
        return DenseTensor([mapping.get(l, l) for l in self.labels], self.data)

    def astype(self, dtype: DType) -> "DenseTensor":
        return DenseTensor(self.labels, self.data.astype(dtype.np_dtype))

    def __repr__(self) -> str:
        dims = "×".join(f"{l.value}:{n}" for l, n in self.dims)
        return f"DenseTensor[{dims}|{self.dtype.value}]"


def bit_equal(a: DenseTensor, b: DenseTensor) -> bool:
    """True when labels, dtype, shape, and raw bytes all match exactly."""
    return (
        a.labels == b.labels
        and a.dtype == b.dtype
        and a.shape == b.shape
        and a.data.tobytes() == b.data.tobytes()
    )


def _check_same_dtype(x: DenseTensor, w: DenseTensor) -> None:
    if x.dtype != w.dtype:
        raise DTypeMismatchError(
            f"mixed precision is disallowed: {x.dtype.value} vs {w.dtype.value}"
        )


def einsum_channel_mix(x: DenseTensor, w: DenseTensor) -> DenseTensor:
    """Contract the channel dimension of ``x`` against a (c, co) weight matrix.

    Y[b, co, ...] = sum_c X[b, c, ...] * W[c, co]; every non-channel dimension
    is carried through element-wise and the output channel keeps the label
    ``c`` with the new extent.
    """
    _check_same_dtype(x, w)
    if w.data.ndim != 2:
        raise DimensionMismatchError(f"channel-mix weight must be 2-D, got {w}")
    c_axis = x.axis(DimLabel.C)
    if x.shape[c_axis] != w.shape[0]:
        raise DimensionMismatchError(
            f"channel extent {x.shape[c_axis]} does not match weight rows {w.shape[0]}"
        )
    out = np.tensordot(x.data, w.data, axes=([c_axis], [0]))
    # tensordot appends the surviving weight axis; move it back into place.
    out = np.moveaxis(out, -1, c_axis)
    return DenseTensor(x.labels, out)


def einsum_spectral(x: DenseTensor, w: DenseTensor) -> DenseTensor:
    """Per-mode channel contraction: Y[b, co, k] = sum_c X[b, c, k] * W[c, co, k].

    ``w`` carries (c, co) leading dimensions followed by the same spectral
    dimensions as ``x`` (element-wise in every mode index).
    """
    _check_same_dtype(x, w)
    if x.labels[0] != DimLabel.B or x.labels[1] != DimLabel.C:
        raise DimensionMismatchError(f"spectral input must be (b, c, ...), got {x}")
    if w.labels[0] != DimLabel.C or w.labels[1] != DimLabel.CO:
        raise DimensionMismatchError(f"spectral weight must be (c, co, ...), got {w}")
    if x.labels[2:] != w.labels[2:]:
        raise DimensionMismatchError(
            f"spectral labels disagree: {x.labels[2:]} vs {w.labels[2:]}"
        )
    if x.shape[2:] != w.shape[2:]:
        raise DimensionMismatchError(
            f"spectral extents disagree: {x.shape[2:]} vs {w.shape[2:]}"
        )
    if x.shape[1] != w.shape[0]:
        raise DimensionMismatchError(
            f"channel extent {x.shape[1]} does not match weight input channels {w.shape[0]}"
        )
    out = np.einsum("bi...,io...->bo...", x.data, w.data, optimize=True)
    return DenseTensor(x.labels, np.ascontiguousarray(out))


# ---------------------------------------------------------------------------
# DTNS byte stream: magic "DTNS", version u8=1, dtype code u8, ndims u8,
# per dim (label code u8 + extent u64 LE), then raw little-endian row-major
# data (complex stored as interleaved re, im).
# ---------------------------------------------------------------------------

MAGIC = b"DTNS"
FORMAT_VERSION = 1


def tensor_to_bytes(t: DenseTensor) -> bytes:
    head = [MAGIC, struct.pack("<BBB", FORMAT_VERSION, _DTYPE_CODE[t.dtype], len(t.labels))]
    for label, extent in t.dims:
        head.append(struct.pack("<BQ", _LABEL_CODE[label], extent))
    payload = np.ascontiguousarray(t.data, dtype=t.dtype.np_dtype).tobytes()
    return b"".join(head) + payload


def tensor_write(t: DenseTensor, sink: BinaryIO) -> int:
    buf = tensor_to_bytes(t)
    sink.write(buf)
    return len(buf)


def tensor_from_bytes(buf: bytes) -> DenseTensor:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise MalformedHeaderError("stream does not start with a DTNS header")
    version, dtype_code, ndims = struct.unpack_from("<BBB", buf, 4)
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"unsupported format version {version}")
    if dtype_code not in _CODE_DTYPE:
        raise UnknownDTypeError(f"unknown dtype code {dtype_code}")
    dtype = _CODE_DTYPE[dtype_code]
    offset = 7
    labels: list[DimLabel] = []
    shape: list[int] = []
    for _ in range(ndims):
        if offset + 9 > len(buf):
            raise TruncatedPayloadError("stream ended inside the dimension table")
        code, extent = struct.unpack_from("<BQ", buf, offset)
        offset += 9
        if code not in _CODE_LABEL:
            raise MalformedHeaderError(f"unknown label code {code}")
        labels.append(_CODE_LABEL[code])
        shape.append(extent)
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    nbytes = count * dtype.itemsize
    if len(buf) - offset < nbytes:
        raise TruncatedPayloadError(
            f"payload holds {len(buf) - offset} bytes, header declares {nbytes}"
        )
    data = np.frombuffer(buf, dtype=dtype.np_dtype, count=count, offset=offset)
    return DenseTensor(labels, data.reshape(shape))


def tensor_read(source: BinaryIO) -> DenseTensor:
    return tensor_from_bytes(source.read())


def serialized_size(labels: Sequence[DimLabel], shape: Sequence[int], dtype: DType) -> int:
    """Byte count tensor_write will produce for the given metadata."""
    count = int(np.prod(shape, dtype=np.int64)) if len(shape) else 1
    return 7 + 9 * len(labels) + count * dtype.itemsize
