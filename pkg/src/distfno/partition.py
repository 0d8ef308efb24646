"""Cartesian decomposition of one tensor dimension across a linear rank set.

Only one dimension is partitioned at a time.  The intersection math below is
what routes every re-partition: each rank's slab under the source partition is
cut against every peer's slab under the destination partition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import InfeasiblePartitionError, ShapeMismatchError
from .tensor import DimLabel, as_label


@dataclass(frozen=True)
class BlockRange:
    """Half-open index range [start, stop)."""

    start: int
    stop: int

    def __post_init__(self):
        if not (0 <= self.start <= self.stop):
            raise ShapeMismatchError(f"invalid range [{self.start}, {self.stop})")

    def __len__(self) -> int:
        return self.stop - self.start

    def shift(self, offset: int) -> "BlockRange":
        return BlockRange(self.start + offset, self.stop + offset)

    def as_slice(self) -> slice:
        return slice(self.start, self.stop)


def range_intersection(a: BlockRange, b: BlockRange) -> Optional[BlockRange]:
    """[max(starts), min(stops)) or None when the ranges do not overlap."""
    start = max(a.start, b.start)
    stop = min(a.stop, b.stop)
    if start >= stop:
        return None
    return BlockRange(start, stop)


def block_decompose(global_extent: int, num_ranks: int) -> tuple[BlockRange, ...]:
    """Split [0, global_extent) into num_ranks contiguous blocks.

    Extents differ by at most one; the first (global_extent mod num_ranks)
    ranks receive the larger extent.
    """
    if num_ranks < 1:
        raise InfeasiblePartitionError(f"need at least one rank, got {num_ranks}")
    if num_ranks > global_extent:
        raise InfeasiblePartitionError(
            f"cannot give {num_ranks} ranks non-empty blocks of extent {global_extent}"
        )
    base, remainder = divmod(global_extent, num_ranks)
    ranges = []
    start = 0
    for rank in range(num_ranks):
        extent = base + (1 if rank < remainder else 0)
        ranges.append(BlockRange(start, start + extent))
        start += extent
    return tuple(ranges)


@dataclass(frozen=True)
class Partition:
    """Assignment of one labeled dimension's index range to ranks."""

    dim: DimLabel
    global_extent: int
    ranges: tuple[BlockRange, ...]

    def __post_init__(self):
        object.__setattr__(self, "dim", as_label(self.dim))
        object.__setattr__(self, "ranges", tuple(self.ranges))
        cursor = 0
        for rank, rng in enumerate(self.ranges):
            if len(rng) == 0:
                raise InfeasiblePartitionError(f"rank {rank} holds an empty block")
            if rng.start != cursor:
                raise ShapeMismatchError(
                    f"rank {rank} block {rng} not contiguous with previous blocks"
                )
            cursor = rng.stop
        if cursor != self.global_extent:
            raise ShapeMismatchError(
                f"blocks cover [0, {cursor}) but global extent is {self.global_extent}"
            )

    @classmethod
    def block(cls, dim: "DimLabel | str", global_extent: int, num_ranks: int) -> "Partition":
        return cls(as_label(dim), global_extent, block_decompose(global_extent, num_ranks))

    @property
    def num_ranks(self) -> int:
        return len(self.ranges)

    def range_of(self, rank: int) -> BlockRange:
        return self.ranges[rank]

    def extent_of(self, rank: int) -> int:
        return len(self.ranges[rank])


@dataclass(frozen=True)
class TransferBlock:
    """One routing entry of a re-partition plan, in local coordinates.

    ``send`` indexes this rank's source slab; ``recv`` indexes this rank's
    destination slab.  ``peer == rank`` marks the local copy.
    """

    peer: int
    send: tuple[BlockRange, ...]
    recv: tuple[BlockRange, ...]

    def send_slices(self) -> tuple[slice, ...]:
        return tuple(r.as_slice() for r in self.send)

    def recv_slices(self) -> tuple[slice, ...]:
        return tuple(r.as_slice() for r in self.recv)

    @property
    def element_count(self) -> int:
        n = 1
        for r in self.send:
            n *= len(r)
        return n


def repartition_plan(
    src: Partition,
    dst: Partition,
    dims: Sequence[tuple[DimLabel, int]],
    rank: int,
) -> list[TransferBlock]:
    """Routing table moving ``rank``'s slab from ``src`` to ``dst`` layout.

    ``dims`` are the global (label, extent) pairs of the tensor being moved.
    Entry ``peer`` receives the intersection of this rank's src slab with the
    peer's dst slab; symmetrically the recv entry for ``peer`` is what that
    peer's slab contributes to ours.  Entries tile both local slabs exactly.
    """
    if src.dim == dst.dim:
        raise ShapeMismatchError(f"source and destination both partition {src.dim.value!r}")
    if src.num_ranks != dst.num_ranks:
        raise ShapeMismatchError(
            f"partitions disagree on rank count: {src.num_ranks} vs {dst.num_ranks}"
        )
    if not (0 <= rank < src.num_ranks):
        raise ShapeMismatchError(f"rank {rank} out of range for {src.num_ranks} ranks")
    labels = [label for label, _ in dims]
    extents = {label: extent for label, extent in dims}
    for part in (src, dst):
        if part.dim not in extents:
            raise ShapeMismatchError(f"tensor has no {part.dim.value!r} dimension")
        if extents[part.dim] != part.global_extent:
            raise ShapeMismatchError(
                f"partition of {part.dim.value!r} covers {part.global_extent}, "
                f"tensor extent is {extents[part.dim]}"
            )
    a_axis = labels.index(src.dim)
    b_axis = labels.index(dst.dim)
    my_a = src.range_of(rank)
    my_b = dst.range_of(rank)

    plan = []
    for peer in range(src.num_ranks):
        # Send: dim a is fully local [0, len), dim b cut to the peer's slab.
        send = []
        # Recv: dim b is fully local, dim a cut to the peer's src slab.
        recv = []
        for axis, (label, extent) in enumerate(dims):
            if axis == a_axis:
                send.append(BlockRange(0, len(my_a)))
                recv.append(src.range_of(peer))
            elif axis == b_axis:
                send.append(dst.range_of(peer))
                recv.append(BlockRange(0, len(my_b)))
            else:
                send.append(BlockRange(0, extent))
                recv.append(BlockRange(0, extent))
        plan.append(TransferBlock(peer, tuple(send), tuple(recv)))
    return plan
