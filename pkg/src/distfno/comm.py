"""Rank-based message transport and the engine's collectives.

Two transports share one endpoint contract: an in-process one backed by
ordered queues (deterministic, used by tests and the default CLI path) and a
multi-process one over local TCP sockets (used by benchmarks).  On top of
either, :class:`Communicator` provides the collectives the network needs --
partition-aware broadcast, its sum-reduction adjoint, re-partition, and a
gather for verification -- with exact off-rank element/byte accounting.

Collectives are blocking and must be invoked by every rank in identical
order.  Each message tag encodes (caller label, primitive, call index), so a
rank running a different collective than its peers is detected as a tag
mismatch rather than producing a wrong answer; a rank not calling at all
surfaces as a timeout.
"""

from __future__ import annotations

import copy
import queue
import random
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    CollectiveMismatchError,
    CollectiveTimeoutError,
    ShapeMismatchError,
)
from .partition import Partition, repartition_plan
from .tensor import DenseTensor, tensor_from_bytes, tensor_to_bytes

BROADCAST = "broadcast"
REDUCE_SUM = "reduce_sum"
REPARTITION = "repartition"
GATHER = "gather"
ALLREDUCE_SCALAR = "allreduce_scalar"

_PRIM_CODE = {
    BROADCAST: 1,
    REDUCE_SUM: 2,
    REPARTITION: 3,
    GATHER: 4,
    ALLREDUCE_SCALAR: 5,
}

DEFAULT_TIMEOUT = 60.0


@dataclass
class PrimitiveStats:
    calls: int = 0
    elements: int = 0
    bytes: int = 0


@dataclass
class CommStats:
    """Per-rank counters per primitive; only off-rank traffic is counted."""

    rank: int = 0
    primitives: dict = field(default_factory=dict)

    def record(self, primitive: str, elements: int, nbytes: int) -> None:
        entry = self.primitives.setdefault(primitive, PrimitiveStats())
        entry.calls += 1
        entry.elements += int(elements)
        entry.bytes += int(nbytes)

    def get(self, primitive: str) -> PrimitiveStats:
        return self.primitives.get(primitive, PrimitiveStats())

    def snapshot(self) -> "CommStats":
        return copy.deepcopy(self)

    def minus(self, earlier: "CommStats") -> "CommStats":
        out = CommStats(rank=self.rank)
        for name, entry in self.primitives.items():
            prev = earlier.get(name)
            out.primitives[name] = PrimitiveStats(
                calls=entry.calls - prev.calls,
                elements=entry.elements - prev.elements,
                bytes=entry.bytes - prev.bytes,
            )
        return out


def aggregate_stats(per_rank: Sequence[CommStats]) -> CommStats:
    """Sum counters over ranks (global traffic view)."""
    out = CommStats(rank=-1)
    for stats in per_rank:
        for name, entry in stats.primitives.items():
            acc = out.primitives.setdefault(name, PrimitiveStats())
            acc.calls += entry.calls
            acc.elements += entry.elements
            acc.bytes += entry.bytes
    return out


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


class InProcessTransport:
    """World of rank endpoints backed by per-(src, dst) ordered queues."""

    def __init__(self, world_size: int):
        self.world_size = world_size
        self._queues = {
            (src, dst): queue.Queue()
            for src in range(world_size)
            for dst in range(world_size)
            if src != dst
        }

    def endpoint(self, rank: int) -> "InProcessEndpoint":
        return InProcessEndpoint(self, rank)


class InProcessEndpoint:
    def __init__(self, transport: InProcessTransport, rank: int):
        self._transport = transport
        self.rank = rank
        self.world_size = transport.world_size

    def send(self, dst: int, tag: int, payload: bytes) -> None:
        self._transport._queues[(self.rank, dst)].put((tag, payload))

    def recv(self, src: int, tag: int, timeout: float) -> bytes:
        try:
            got_tag, payload = self._transport._queues[(src, self.rank)].get(
                timeout=timeout
            )
        except queue.Empty:
            raise CollectiveTimeoutError(
                f"rank {self.rank} timed out waiting for rank {src} "
                f"({_describe_tag(tag)}); a peer likely skipped the collective"
            ) from None
        if got_tag != tag:
            raise CollectiveMismatchError(
                f"rank {self.rank} expected {_describe_tag(tag)} from rank {src} "
                f"but received {_describe_tag(got_tag)}"
            )
        return payload

    def close(self) -> None:
        pass


# Socket frame: u32 length prefix (little-endian, counts tag + payload),
# then tag u64 little-endian, then payload bytes.
_FRAME_HEAD = struct.Struct("<IQ")


def encode_frame(tag: int, payload: bytes) -> bytes:
    return _FRAME_HEAD.pack(8 + len(payload), tag) + payload


def _recv_exact(conn: socket.socket, n: int, deadline: float) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        budget = deadline - time.monotonic()
        if budget <= 0:
            raise socket.timeout()
        conn.settimeout(budget)
        chunk = conn.recv(min(remaining, 1 << 20))
        if not chunk:
            raise CollectiveMismatchError("peer closed the connection mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class SocketEndpoint:
    """One rank's end of a full TCP mesh on the local host.

    Sends are queued to a writer thread per peer so collectives can post all
    outgoing blocks before draining incoming ones without risking a
    buffer-full deadlock.
    """

    def __init__(self, rank: int, world_size: int, conns: dict):
        self.rank = rank
        self.world_size = world_size
        self._conns = conns
        self._send_queues = {}
        self._writers = []
        for peer, conn in conns.items():
            q: queue.Queue = queue.Queue()
            t = threading.Thread(target=self._writer, args=(conn, q), daemon=True)
            t.start()
            self._send_queues[peer] = q
            self._writers.append(t)

    @staticmethod
    def _writer(conn: socket.socket, q: "queue.Queue") -> None:
        while True:
            blob = q.get()
            if blob is None:
                return
            try:
                conn.sendall(blob)
            except OSError:
                return

    def send(self, dst: int, tag: int, payload: bytes) -> None:
        self._send_queues[dst].put(encode_frame(tag, payload))

    def recv(self, src: int, tag: int, timeout: float) -> bytes:
        conn = self._conns[src]
        deadline = time.monotonic() + timeout
        try:
            head = _recv_exact(conn, _FRAME_HEAD.size, deadline)
            length, got_tag = _FRAME_HEAD.unpack(head)
            payload = _recv_exact(conn, length - 8, deadline)
        except socket.timeout:
            raise CollectiveTimeoutError(
                f"rank {self.rank} timed out waiting for rank {src} "
                f"({_describe_tag(tag)})"
            ) from None
        if got_tag != tag:
            raise CollectiveMismatchError(
                f"rank {self.rank} expected {_describe_tag(tag)} from rank {src} "
                f"but received {_describe_tag(got_tag)}"
            )
        return payload

    def close(self) -> None:
        for q in self._send_queues.values():
            q.put(None)
        for t in self._writers:
            t.join(timeout=5.0)
        for conn in self._conns.values():
            try:
                conn.close()
            except OSError:
                pass


def connect_socket_mesh(
    rank: int,
    world_size: int,
    base_port: int,
    host: str = "127.0.0.1",
    connect_timeout: float = 20.0,
) -> SocketEndpoint:
    """Rendezvous: rank r listens on base_port + r, dials every lower rank."""
    if world_size == 1:
        return SocketEndpoint(rank, world_size, {})
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind((host, base_port + rank))
    listener.listen(world_size)
    conns: dict[int, socket.socket] = {}
    deadline = time.monotonic() + connect_timeout
    try:
        for peer in range(rank):
            while True:
                try:
                    conn = socket.create_connection(
                        (host, base_port + peer), timeout=1.0
                    )
                    break
                except (ConnectionRefusedError, socket.timeout, OSError):
                    if time.monotonic() > deadline:
                        raise CollectiveTimeoutError(
                            f"rank {rank} could not reach rank {peer} on port "
                            f"{base_port + peer}"
                        ) from None
                    time.sleep(0.02)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.sendall(struct.pack("<I", rank))
            conns[peer] = conn
        for _ in range(world_size - rank - 1):
            listener.settimeout(max(0.0, deadline - time.monotonic()))
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                raise CollectiveTimeoutError(
                    f"rank {rank} timed out waiting for higher ranks to dial in"
                ) from None
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            (peer,) = struct.unpack("<I", _recv_exact(conn, 4, deadline))
            conns[peer] = conn
    finally:
        listener.close()
    return SocketEndpoint(rank, world_size, conns)


def pick_base_port(world_size: int, attempts: int = 50) -> int:
    """Find a base port with ``world_size`` consecutive free ports."""
    for _ in range(attempts):
        base = random.randint(20000, 55000)
        probes = []
        try:
            for offset in range(world_size):
                s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                s.bind(("127.0.0.1", base + offset))
                probes.append(s)
            return base
        except OSError:
            continue
        finally:
            for s in probes:
                s.close()
    raise OSError("could not find a free port block")


# ---------------------------------------------------------------------------
# Collectives
# ---------------------------------------------------------------------------


def _describe_tag(tag: int) -> str:
    code = (tag >> 24) & 0xFF
    seq = tag & 0xFFFFFF
    names = {v: k for k, v in _PRIM_CODE.items()}
    return f"collective #{seq} ({names.get(code, 'unknown')}, tag {tag:#x})"


class Communicator:
    """Collectives over one rank's endpoint, with per-primitive accounting."""

    def __init__(self, endpoint, timeout: float = DEFAULT_TIMEOUT):
        self._ep = endpoint
        self.rank = endpoint.rank
        self.world_size = endpoint.world_size
        self.timeout = timeout
        self.stats = CommStats(rank=self.rank)
        self._seq = 0

    # -- plumbing --

    def _next_tag(self, primitive: str, label: str) -> int:
        tag = (
            (zlib.crc32(label.encode()) << 32)
            | (_PRIM_CODE[primitive] << 24)
            | (self._seq & 0xFFFFFF)
        )
        self._seq += 1
        return tag

    def report(self) -> CommStats:
        """Consistent snapshot of this rank's counters (comm report)."""
        return self.stats.snapshot()

    def close(self) -> None:
        self._ep.close()

    # -- collectives --

    def broadcast(
        self, t: Optional[DenseTensor], root: int = 0, label: str = ""
    ) -> DenseTensor:
        """Replicate the root's tensor on every rank.

        Non-root ranks may pass None or their (expected-identical) replica;
        passing a replica whose metadata disagrees with the root's raises.
        """
        tag = self._next_tag(BROADCAST, label)
        if self.rank == root:
            if t is None:
                raise CollectiveMismatchError("broadcast root holds no tensor")
            blob = tensor_to_bytes(t)
            for dst in range(self.world_size):
                if dst != root:
                    self._ep.send(dst, tag, blob)
            sent = t.size * (self.world_size - 1)
            self.stats.record(BROADCAST, sent, sent * t.dtype.itemsize)
            return t
        blob = self._ep.recv(root, tag, self.timeout)
        received = tensor_from_bytes(blob)
        if t is not None and (t.dims != received.dims or t.dtype != received.dtype):
            raise CollectiveMismatchError(
                f"rank {self.rank} broadcast metadata {t.dims} disagrees with "
                f"root's {received.dims}"
            )
        self.stats.record(BROADCAST, 0, 0)
        return received

    def reduce_sum(
        self, t: DenseTensor, root: int = 0, label: str = ""
    ) -> Optional[DenseTensor]:
        """Element-wise sum over ranks, delivered on root (None elsewhere).

        Adjoint of broadcast.  Summation runs in rank order so results are
        bit-identical across runs.
        """
        tag = self._next_tag(REDUCE_SUM, label)
        if self.rank != root:
            self._ep.send(root, tag, tensor_to_bytes(t))
            self.stats.record(REDUCE_SUM, t.size, t.size * t.dtype.itemsize)
            return None
        parts: list[Optional[DenseTensor]] = [None] * self.world_size
        parts[root] = t
        for src in range(self.world_size):
            if src == root:
                continue
            other = tensor_from_bytes(self._ep.recv(src, tag, self.timeout))
            if other.dims != t.dims or other.dtype != t.dtype:
                raise CollectiveMismatchError(
                    f"reduce_sum shapes disagree: root holds {t.dims}, "
                    f"rank {src} sent {other.dims}"
                )
            parts[src] = other
        acc = parts[0].data.copy()
        for part in parts[1:]:
            acc += part.data
        self.stats.record(REDUCE_SUM, 0, 0)
        return DenseTensor(t.labels, acc)

    def repartition(
        self,
        t: DenseTensor,
        src_part: Partition,
        dst_part: Partition,
        label: str = "",
    ) -> DenseTensor:
        """Move this rank's src-partition slab into its dst-partition slab.

        A pure permutation of the global tensor: every element is sent (or
        copied locally) exactly once.  Only off-rank blocks are counted.
        """
        if src_part.num_ranks != self.world_size:
            raise ShapeMismatchError(
                f"partition has {src_part.num_ranks} ranks, world is {self.world_size}"
            )
        # Reconstruct global dims from the local slab.
        dims = []
        for axis, (lbl, extent) in enumerate(t.dims):
            if lbl == src_part.dim:
                if extent != src_part.extent_of(self.rank):
                    raise ShapeMismatchError(
                        f"rank {self.rank} holds {extent} along {lbl.value!r}, "
                        f"partition says {src_part.extent_of(self.rank)}"
                    )
                dims.append((lbl, src_part.global_extent))
            else:
                dims.append((lbl, extent))
        plan = repartition_plan(src_part, dst_part, dims, self.rank)
        tag = self._next_tag(REPARTITION, label)

        # Output slab shape: dst dim local, src dim back to global.
        out_shape = []
        for lbl, extent in dims:
            if lbl == dst_part.dim:
                out_shape.append(dst_part.extent_of(self.rank))
            else:
                out_shape.append(extent)
        out = np.empty(out_shape, dtype=t.data.dtype)

        sent_elements = 0
        for entry in plan:
            if entry.peer == self.rank:
                continue
            block = np.ascontiguousarray(t.data[entry.send_slices()])
            self._ep.send(entry.peer, tag, tensor_to_bytes(DenseTensor(t.labels, block)))
            sent_elements += block.size
        for entry in plan:
            if entry.peer == self.rank:
                out[entry.recv_slices()] = t.data[entry.send_slices()]
                continue
            block = tensor_from_bytes(self._ep.recv(entry.peer, tag, self.timeout))
            expected = tuple(len(r) for r in entry.recv)
            if block.shape != expected or block.labels != t.labels:
                raise CollectiveMismatchError(
                    f"rank {self.rank} expected a {expected} block from rank "
                    f"{entry.peer}, got {block.shape}"
                )
            out[entry.recv_slices()] = block.data
        self.stats.record(
            REPARTITION, sent_elements, sent_elements * t.dtype.itemsize
        )
        return DenseTensor(t.labels, out)

    def gather(
        self, t: DenseTensor, part: Partition, root: int = 0, label: str = ""
    ) -> Optional[DenseTensor]:
        """Assemble the global tensor from per-rank slabs on root."""
        tag = self._next_tag(GATHER, label)
        axis = t.axis(part.dim)
        if t.shape[axis] != part.extent_of(self.rank):
            raise ShapeMismatchError(
                f"rank {self.rank} slab extent {t.shape[axis]} does not match "
                f"partition extent {part.extent_of(self.rank)}"
            )
        if self.rank != root:
            self._ep.send(root, tag, tensor_to_bytes(t))
            self.stats.record(GATHER, t.size, t.size * t.dtype.itemsize)
            return None
        shape = list(t.shape)
        shape[axis] = part.global_extent
        out = np.empty(shape, dtype=t.data.dtype)
        for src in range(self.world_size):
            if src == root:
                block = t.data
            else:
                received = tensor_from_bytes(self._ep.recv(src, tag, self.timeout))
                if received.labels != t.labels:
                    raise CollectiveMismatchError(
                        f"gather labels disagree: {received.labels} vs {t.labels}"
                    )
                block = received.data
            index = [slice(None)] * len(shape)
            index[axis] = part.range_of(src).as_slice()
            if block.shape[axis] != part.extent_of(src):
                raise CollectiveMismatchError(
                    f"gather slab from rank {src} has extent {block.shape[axis]}, "
                    f"partition says {part.extent_of(src)}"
                )
            out[tuple(index)] = block
        self.stats.record(GATHER, 0, 0)
        return DenseTensor(t.labels, out)

    def allreduce_sum_scalar(self, value: float, label: str = "") -> float:
        """Sum a float64 over ranks; every rank receives the identical total."""
        tag = self._next_tag(ALLREDUCE_SCALAR, label)
        root = 0
        if self.rank != root:
            self._ep.send(root, tag, struct.pack("<d", float(value)))
            self.stats.record(ALLREDUCE_SCALAR, 1, 8)
            total = struct.unpack("<d", self._ep.recv(root, tag, self.timeout))[0]
            return total
        total = float(value)
        for src in range(1, self.world_size):
            total += struct.unpack("<d", self._ep.recv(src, tag, self.timeout))[0]
        blob = struct.pack("<d", total)
        for dst in range(1, self.world_size):
            self._ep.send(dst, tag, blob)
        self.stats.record(
            ALLREDUCE_SCALAR, self.world_size - 1, 8 * (self.world_size - 1)
        )
        return struct.unpack("<d", blob)[0]


def comm_report(comm: Communicator) -> CommStats:
    """Snapshot of one rank's communication counters."""
    return comm.report()


# ---------------------------------------------------------------------------
# Rank runner
# ---------------------------------------------------------------------------


def run_ranks(
    world_size: int,
    fn: Callable[[Communicator], object],
    timeout: float = DEFAULT_TIMEOUT,
    join_timeout: float = 600.0,
) -> list:
    """Run ``fn(comm)`` on every rank of an in-process world; return results
    in rank order.  The first rank exception is re-raised."""
    transport = InProcessTransport(world_size)
    results = [None] * world_size
    errors: list[Optional[BaseException]] = [None] * world_size

    def runner(rank: int) -> None:
        comm = Communicator(transport.endpoint(rank), timeout=timeout)
        try:
            results[rank] = fn(comm)
        except BaseException as exc:  # noqa: BLE001 - propagated to caller
            errors[rank] = exc

    threads = [
        threading.Thread(target=runner, args=(rank,), daemon=True)
        for rank in range(world_size)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=join_timeout)
        if t.is_alive():
            raise CollectiveTimeoutError("a rank thread did not finish")
    for exc in errors:
        if exc is not None:
            raise exc
    return results
