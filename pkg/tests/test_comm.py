import struct
import threading

import numpy as np
import pytest

from distfno.comm import (
    BROADCAST,
    REDUCE_SUM,
    REPARTITION,
    Communicator,
    InProcessTransport,
    aggregate_stats,
    comm_report,
    connect_socket_mesh,
    encode_frame,
    pick_base_port,
    run_ranks,
)
from distfno.errors import (
    CollectiveMismatchError,
    CollectiveTimeoutError,
    ShapeMismatchError,
)
from distfno.partition import Partition
from distfno.tensor import DenseTensor, bit_equal


def tensor_xy(rng, nx, ny):
    return DenseTensor(("x", "y"), rng.standard_normal((nx, ny)))


class TestBroadcast:
    def test_single_rank_no_bytes(self):
        t = DenseTensor(("b",), np.arange(3.0))

        def worker(comm):
            out = comm.broadcast(t)
            stats = comm_report(comm)
            return out, stats

        (out, stats), = run_ranks(1, worker)
        assert bit_equal(out, t)
        assert stats.get(BROADCAST).elements == 0
        assert stats.get(BROADCAST).bytes == 0
        assert stats.get(BROADCAST).calls == 1

    def test_counts_and_bit_equality(self):
        rng = np.random.default_rng(0)
        t = DenseTensor(("x", "y"), rng.standard_normal((2, 2)))

        def worker(comm):
            out = comm.broadcast(t if comm.rank == 0 else None)
            return out, comm.report()

        results = run_ranks(4, worker)
        for out, _ in results:
            assert bit_equal(out, t)
        root_stats = results[0][1]
        assert root_stats.get(BROADCAST).elements == 3 * 4
        assert root_stats.get(BROADCAST).bytes == 3 * 4 * 8
        assert aggregate_stats([s for _, s in results]).get(BROADCAST).elements == 12

    def test_metadata_disagreement_detected(self):
        t_root = DenseTensor(("x", "y"), np.zeros((2, 2)))
        t_other = DenseTensor(("x", "y"), np.zeros((3, 2)))

        def worker(comm):
            comm.broadcast(t_root if comm.rank == 0 else t_other)

        with pytest.raises(CollectiveMismatchError):
            run_ranks(2, worker, timeout=5.0)


class TestReduceSum:
    def test_all_ones_sum_to_world_size(self):
        def worker(comm):
            ones = DenseTensor(("b",), np.ones(5))
            return comm.reduce_sum(ones)

        results = run_ranks(4, worker)
        assert np.all(results[0].data == 4.0)
        assert all(r is None for r in results[1:])

    def test_single_rank_identity(self):
        def worker(comm):
            return comm.reduce_sum(DenseTensor(("b",), np.arange(4.0)))

        (out,) = run_ranks(1, worker)
        assert np.array_equal(out.data, np.arange(4.0))

    def test_shape_mismatch(self):
        def worker(comm):
            n = 3 if comm.rank == 0 else 4
            return comm.reduce_sum(DenseTensor(("b",), np.ones(n)))

        with pytest.raises(CollectiveMismatchError):
            run_ranks(2, worker, timeout=5.0)

    def test_adjoint_of_broadcast(self):
        # <B x, {y_r}> == <x, sum_r y_r> on random real64 data
        rng = np.random.default_rng(1)
        x = DenseTensor(("x", "y"), rng.standard_normal((3, 4)))
        ys = [rng.standard_normal((3, 4)) for _ in range(4)]

        def worker(comm):
            bx = comm.broadcast(x if comm.rank == 0 else None)
            y = DenseTensor(("x", "y"), ys[comm.rank])
            local = float(np.vdot(bx.data, y.data))
            lhs = comm.allreduce_sum_scalar(local)
            total = comm.reduce_sum(y)
            if comm.rank == 0:
                rhs = float(np.vdot(x.data, total.data))
                return lhs, rhs
            return None

        lhs, rhs = run_ranks(4, worker)[0]
        assert abs(lhs - rhs) / abs(lhs) < 1e-12


class TestRepartition:
    def test_8x8_volume_and_permutation(self):
        rng = np.random.default_rng(2)
        values = rng.standard_normal((8, 8))
        src = Partition.block("x", 8, 4)
        dst = Partition.block("y", 8, 4)

        def worker(comm):
            mine = DenseTensor(("x", "y"), values[src.range_of(comm.rank).as_slice()])
            out = comm.repartition(mine, src, dst)
            return out, comm.report()

        results = run_ranks(4, worker)
        for rank, (out, stats) in enumerate(results):
            assert np.array_equal(
                out.data, values[:, dst.range_of(rank).as_slice()]
            )
            assert stats.get(REPARTITION).elements == 12
            assert stats.get(REPARTITION).bytes == 96
            assert stats.get(REPARTITION).calls == 1

    def test_round_trip_bit_equal(self):
        rng = np.random.default_rng(3)
        values = rng.standard_normal((10, 6)) + 1j * rng.standard_normal((10, 6))
        src = Partition.block("x", 10, 3)
        dst = Partition.block("y", 6, 3)

        def worker(comm):
            mine = DenseTensor(("x", "y"), values[src.range_of(comm.rank).as_slice()])
            moved = comm.repartition(mine, src, dst)
            back = comm.repartition(moved, dst, src)
            return bit_equal(back, mine)

        assert all(run_ranks(3, worker))

    def test_adjoint_identity(self):
        # R is a permutation: <R x, y> == <x, R_rev y>
        rng = np.random.default_rng(4)
        src = Partition.block("x", 8, 2)
        dst = Partition.block("y", 6, 2)

        def worker(comm):
            r = np.random.default_rng(100 + comm.rank)
            x = DenseTensor(("x", "y"), r.standard_normal((src.extent_of(comm.rank), 6)))
            y = DenseTensor(("x", "y"), r.standard_normal((8, dst.extent_of(comm.rank))))
            rx = comm.repartition(x, src, dst)
            lhs = comm.allreduce_sum_scalar(float(np.vdot(rx.data, y.data)))
            ry = comm.repartition(y, dst, src)
            rhs = comm.allreduce_sum_scalar(float(np.vdot(x.data, ry.data)))
            return lhs, rhs

        for lhs, rhs in run_ranks(2, worker):
            assert abs(lhs - rhs) / abs(lhs) < 1e-12

    def test_wrong_local_extent(self):
        src = Partition.block("x", 8, 2)
        dst = Partition.block("y", 8, 2)

        def worker(comm):
            bad = DenseTensor(("x", "y"), np.zeros((3, 8)))  # should be 4
            comm.repartition(bad, src, dst)

        with pytest.raises(ShapeMismatchError):
            run_ranks(2, worker, timeout=5.0)


class TestGatherAndScalars:
    def test_gather_assembles_in_rank_order(self):
        part = Partition.block("x", 7, 3)
        values = np.arange(7 * 2, dtype=float).reshape(7, 2)

        def worker(comm):
            mine = DenseTensor(("x", "y"), values[part.range_of(comm.rank).as_slice()])
            return comm.gather(mine, part)

        results = run_ranks(3, worker)
        assert np.array_equal(results[0].data, values)
        assert results[1] is None and results[2] is None

    def test_allreduce_scalar(self):
        def worker(comm):
            return comm.allreduce_sum_scalar(float(comm.rank + 1))

        assert run_ranks(4, worker) == [10.0, 10.0, 10.0, 10.0]


class TestStatsAndDeterminism:
    def test_fresh_transport_all_zero(self):
        def worker(comm):
            return comm.report()

        stats = run_ranks(2, worker)[0]
        assert stats.primitives == {}
        assert stats.get(REDUCE_SUM).calls == 0

    def test_counters_monotone(self):
        t = DenseTensor(("b",), np.ones(4))

        def worker(comm):
            snaps = []
            for _ in range(3):
                comm.broadcast(t if comm.rank == 0 else None)
                snaps.append(comm.report())
            return snaps

        snaps = run_ranks(2, worker)[0]
        counts = [s.get(BROADCAST).elements for s in snaps]
        assert counts == sorted(counts) == [4, 8, 12]

    def test_identical_runs_identical_results_and_stats(self):
        src = Partition.block("x", 8, 2)
        dst = Partition.block("y", 8, 2)

        def program(comm):
            rng = np.random.default_rng(7 + comm.rank)
            local = DenseTensor(
                ("x", "y"), rng.standard_normal((src.extent_of(comm.rank), 8))
            )
            moved = comm.repartition(local, src, dst)
            total = comm.reduce_sum(moved)
            out = comm.broadcast(total if comm.rank == 0 else None)
            stats = comm.report()
            return out.data.tobytes(), [
                (k, v.calls, v.elements, v.bytes)
                for k, v in sorted(stats.primitives.items())
            ]

        first = run_ranks(2, program)
        second = run_ranks(2, program)
        assert first == second


class TestCollectiveSafety:
    def test_mismatched_collectives_raise(self):
        def worker(comm):
            t = DenseTensor(("b",), np.ones(3))
            if comm.rank == 0:
                return comm.reduce_sum(t, root=0)   # expects data from rank 1
            return comm.broadcast(t, root=1)        # sends a broadcast instead

        with pytest.raises(CollectiveMismatchError):
            run_ranks(2, worker, timeout=5.0)

    def test_skipped_collective_times_out(self):
        def worker(comm):
            if comm.rank == 1:
                return None  # never joins the collective
            return comm.reduce_sum(DenseTensor(("b",), np.ones(3)))

        with pytest.raises(CollectiveTimeoutError):
            run_ranks(2, worker, timeout=0.3)


class TestSocketTransport:
    def test_frame_layout(self):
        frame = encode_frame(0xDEADBEEF, b"abc")
        length, tag = struct.unpack_from("<IQ", frame, 0)
        assert length == 8 + 3          # length prefix covers tag + payload
        assert tag == 0xDEADBEEF
        assert frame[12:] == b"abc"

    def _run_socket_world(self, world, fn, timeout=30.0):
        base = pick_base_port(world)
        results = [None] * world
        errors = [None] * world

        def runner(rank):
            comm = None
            try:
                comm = Communicator(
                    connect_socket_mesh(rank, world, base), timeout=timeout
                )
                results[rank] = fn(comm)
            except BaseException as exc:  # noqa: BLE001
                errors[rank] = exc
            finally:
                if comm is not None:
                    comm.close()

        threads = [threading.Thread(target=runner, args=(r,)) for r in range(world)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=60.0)
        for exc in errors:
            if exc is not None:
                raise exc
        return results

    def test_collectives_over_sockets(self):
        rng = np.random.default_rng(5)
        values = rng.standard_normal((9, 6))
        src = Partition.block("x", 9, 3)
        dst = Partition.block("y", 6, 3)
        t = DenseTensor(("x", "y"), values)

        def worker(comm):
            got = comm.broadcast(t if comm.rank == 0 else None)
            mine = DenseTensor(("x", "y"), values[src.range_of(comm.rank).as_slice()])
            moved = comm.repartition(mine, src, dst)
            gathered = comm.gather(moved, dst)
            return bit_equal(got, t), gathered

        results = self._run_socket_world(3, worker)
        assert all(ok for ok, _ in results)
        # gather over dst reassembles columns in rank order == original
        assert np.array_equal(results[0][1].data, values)

    def test_socket_matches_inproc_stats(self):
        src = Partition.block("x", 8, 2)
        dst = Partition.block("y", 8, 2)

        def program(comm):
            local = DenseTensor(
                ("x", "y"),
                np.full((src.extent_of(comm.rank), 8), float(comm.rank)),
            )
            out = comm.repartition(local, src, dst)
            s = comm.report().get(REPARTITION)
            return out.data.tobytes(), (s.calls, s.elements, s.bytes)

        over_sockets = self._run_socket_world(2, program)
        over_queues = run_ranks(2, program)
        assert over_sockets == over_queues
