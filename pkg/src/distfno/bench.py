"""Benchmark and verification harnesses behind the CLI.

Every distributed routine is written as a *driver*: a function of
``(comm, opts)`` with a JSON-able ``opts`` dict, returning a JSON-able dict
on rank 0.  Drivers run identically over the in-process transport (threads)
or the socket transport (one OS process per rank spawned by the CLI), so the
benchmarks exercise real process boundaries while the tests stay
deterministic and in-process.
"""

from __future__ import annotations

import hashlib
import json
import statistics
import subprocess
import sys
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .comm import (
    REPARTITION,
    Communicator,
    connect_socket_mesh,
    pick_base_port,
    run_ranks,
)
from .fno import (
    ActivationKind,
    FnoConfig,
    FnoParams,
    ForwardCache,
    fno_backward,
    fno_block_forward,
    fno_forward,
    init_params,
    predicted_block_volume,
    shard_params,
    slice_local,
)
from .oracle import serial_fno_forward
from .partition import Partition
from .spectral import ModeSpec, retained_indices
from .taskpool import ObjectStore, TaskPool, weak_scaling_efficiency
from .tensor import DenseTensor, DimLabel, DType
from .training import (
    AdamState,
    gather_params,
    global_output_count,
    save_checkpoint,
    train_step,
)

DATA_LABELS = (DimLabel.B, DimLabel.C, DimLabel.X, DimLabel.Y, DimLabel.Z, DimLabel.T)


def config_from_opts(opts: dict) -> FnoConfig:
    grid = opts["grid"]
    modes = opts["modes"]
    return FnoConfig(
        nx=grid[0], ny=grid[1], nz=grid[2], nt=grid[3],
        in_channels=opts.get("in_channels", opts["channels"]),
        out_channels=opts.get("out_channels", opts["channels"]),
        hidden_channels=opts["channels"],
        modes=ModeSpec.of_xyzt(*modes),
        num_blocks=opts.get("blocks", 4),
        activation=ActivationKind(opts.get("activation", "gelu")),
        dtype=DType(opts.get("dtype", "real64")),
        num_ranks=opts["workers"],
    )


def _rng_input(config: FnoConfig, batch: int, seed: int) -> DenseTensor:
    rng = np.random.default_rng(seed)
    shape = (batch, config.in_channels) + config.grid
    data = rng.standard_normal(shape)
    return DenseTensor(DATA_LABELS, data.astype(config.dtype.np_dtype))


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def _complex_dot(comm: Communicator, a: np.ndarray, b: np.ndarray, label: str) -> complex:
    local = np.vdot(a, b)
    re = comm.allreduce_sum_scalar(local.real, label=f"{label}.re")
    im = comm.allreduce_sum_scalar(local.imag, label=f"{label}.im")
    return complex(re, im)


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def drive_parity_forward(comm: Communicator, opts: dict) -> Optional[dict]:
    """Distributed forward vs the serial oracle on identical inputs/weights."""
    config = config_from_opts(opts)
    batch = opts.get("batch", 1)
    seed = opts["seed"]
    params = init_params(config, seed)
    x_global = _rng_input(config, batch, seed + 1000)
    local = slice_local(x_global, config.x_partition(), comm.rank)

    before = comm.stats.snapshot()
    y_local = fno_forward(comm, local, shard_params(params, config, comm.rank), config)
    delta = comm.stats.minus(before)
    repart_elements = comm.allreduce_sum_scalar(
        float(delta.get(REPARTITION).elements), label="parity.elems"
    )
    gathered = comm.gather(y_local, config.x_partition(), root=0, label="parity.gather")
    if comm.rank != 0:
        return None
    reference = serial_fno_forward(x_global, params, config)
    return {
        "max_rel_err": _rel_err(gathered.data, reference.data),
        "repart_calls_per_rank": delta.get(REPARTITION).calls,
        "repart_elements_total": int(repart_elements),
        "output_digest": _digest(gathered.data),
    }


def _digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def drive_adjoint(comm: Communicator, opts: dict) -> Optional[dict]:
    """Dot tests for the two communicating primitives: <Lx, y> == <x, L^T y>.

    Broadcast pairs with sum-reduction; a re-partition pairs with the reverse
    re-partition.  All data complex128; ``pairs`` random vector pairs each.
    """
    pairs = opts.get("pairs", 20)
    seed = opts["seed"]
    world = comm.world_size
    shape = tuple(opts.get("shape", (3, 4, 5)))
    labels = (DimLabel.B, DimLabel.C, DimLabel.Z)

    def cplx(rng, shp):
        return rng.standard_normal(shp) + 1j * rng.standard_normal(shp)

    max_bcast = 0.0
    for trial in range(pairs):
        rng = np.random.default_rng(seed + trial)
        x = DenseTensor(labels, cplx(rng, shape))
        y_all = [cplx(np.random.default_rng(seed + 7000 + trial * world + r), shape)
                 for r in range(world)]
        y_local = DenseTensor(labels, y_all[comm.rank])
        bx = comm.broadcast(x if comm.rank == 0 else None, root=0, label="adj.b")
        lhs = _complex_dot(comm, bx.data, y_local.data, "adj.lhs")
        red = comm.reduce_sum(y_local, root=0, label="adj.r")
        if comm.rank == 0:
            rhs = np.vdot(x.data, red.data)
            err = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
            max_bcast = max(max_bcast, err)

    max_repart = 0.0
    nx_glob, ny_glob = opts.get("repart_extents", (8, 6))
    src = Partition.block(DimLabel.X, nx_glob, world)
    dst = Partition.block(DimLabel.Y, ny_glob, world)
    for trial in range(pairs):
        rng = np.random.default_rng(seed + 3000 + trial * (comm.rank + 1))
        x_local = DenseTensor(
            (DimLabel.X, DimLabel.Y),
            cplx(rng, (src.extent_of(comm.rank), ny_glob)),
        )
        y_local = DenseTensor(
            (DimLabel.X, DimLabel.Y),
            cplx(rng, (nx_glob, dst.extent_of(comm.rank))),
        )
        rx = comm.repartition(x_local, src, dst, label="adj.fwd")
        lhs = _complex_dot(comm, rx.data, y_local.data, "adj.rl")
        ry = comm.repartition(y_local, dst, src, label="adj.rev")
        rhs = _complex_dot(comm, x_local.data, ry.data, "adj.rr")
        err = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
        max_repart = max(max_repart, err)

    if comm.rank != 0:
        return None
    return {"broadcast_reduce_max_err": max_bcast, "repartition_max_err": max_repart}


def _loss_half_norm(comm: Communicator, config: FnoConfig, params_local, x_local) -> float:
    y = fno_forward(comm, x_local, params_local, config)
    local = 0.5 * float(np.sum(y.data * y.data))
    return comm.allreduce_sum_scalar(local, label="fd.loss")


def _perturb(params: FnoParams, direction: FnoParams, h: float) -> FnoParams:
    blocks = tuple(
        DenseTensor(w.labels, w.data + h * d.data)
        for w, d in zip(params.blocks, direction.blocks)
    )
    return FnoParams(
        DenseTensor(params.we.labels, params.we.data + h * direction.we.data),
        DenseTensor(params.wd.labels, params.wd.data + h * direction.wd.data),
        blocks,
        sharded=params.sharded,
    )


def _random_direction(config: FnoConfig, seed: int) -> FnoParams:
    rng = np.random.default_rng(seed)
    real = config.dtype.np_dtype
    cplx = config.complex_dtype.np_dtype
    we = rng.standard_normal((config.in_channels, config.hidden_channels)).astype(real)
    wd = rng.standard_normal((config.hidden_channels, config.out_channels)).astype(real)
    shape = config.spectral_weight_shape()
    labels = (DimLabel.C, DimLabel.CO, DimLabel.KX, DimLabel.KY, DimLabel.KZ, DimLabel.KT)
    blocks = tuple(
        DenseTensor(
            labels,
            (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(cplx),
        )
        for _ in range(config.num_blocks)
    )
    return FnoParams(
        DenseTensor((DimLabel.C, DimLabel.CO), we),
        DenseTensor((DimLabel.C, DimLabel.CO), wd),
        blocks,
        sharded=False,
    )


def drive_gradient(comm: Communicator, opts: dict) -> Optional[dict]:
    """Central finite differences vs the adjoint backward pass.

    Loss is 0.5 * ||forward(x)||^2; for each random parameter direction d the
    directional derivative (L(p + h d) - L(p - h d)) / 2h is compared with
    <grad, d> under the real inner product.
    """
    config = config_from_opts(opts)
    batch = opts.get("batch", 1)
    seed = opts["seed"]
    directions = opts.get("directions", 20)
    h = opts.get("step", 1e-6)

    params = init_params(config, seed)
    x_global = _rng_input(config, batch, seed + 1000)
    x_local = slice_local(x_global, config.x_partition(), comm.rank)
    local_params = shard_params(params, config, comm.rank)

    cache = ForwardCache()
    y = fno_forward(comm, x_local, local_params, config, cache=cache)
    g_up = DenseTensor(y.labels, y.data.copy())  # d(0.5||y||^2)/dy = y
    _, grads = fno_backward(comm, g_up, local_params, config, cache)

    kypart = config.ky_partition()
    my_ky = kypart.range_of(comm.rank)
    max_err = 0.0
    errors = []
    for trial in range(directions):
        direction = _random_direction(config, seed + 5000 + trial)
        dir_local = shard_params(direction, config, comm.rank)
        # <grad, d> with replicated mixer grads counted once (on rank 0).
        inner_local = 0.0
        for gw, dw in zip(grads.blocks, dir_local.blocks):
            inner_local += float(np.real(np.vdot(gw.data, dw.data)))
        if comm.rank == 0:
            inner_local += float(np.vdot(grads.we.data, direction.we.data))
            inner_local += float(np.vdot(grads.wd.data, direction.wd.data))
        analytic = comm.allreduce_sum_scalar(inner_local, label="fd.inner")

        plus = _loss_half_norm(
            comm, config, shard_params(_perturb(params, direction, +h), config, comm.rank), x_local
        )
        minus = _loss_half_norm(
            comm, config, shard_params(_perturb(params, direction, -h), config, comm.rank), x_local
        )
        numeric = (plus - minus) / (2.0 * h)
        err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-300)
        errors.append(err)
        max_err = max(max_err, err)
    if comm.rank != 0:
        return None
    return {"max_rel_err": max_err, "errors": errors, "ky_extent": len(my_ky)}


def local_adjoint_errors(seed: int, pairs: int = 20) -> dict:
    """Dot tests for the rank-local linear stages (no transport involved):
    truncation vs zero-padding, and the FFT vs its N-scaled inverse."""
    from .spectral import fft_dims, ifft_dims, pad_modes, truncate_modes

    spec = ModeSpec({DimLabel.KY: 2, DimLabel.KZ: 2})
    labels = (DimLabel.KY, DimLabel.KZ)
    full = {DimLabel.KY: 9, DimLabel.KZ: 6}
    max_trunc = 0.0
    max_fft = 0.0
    for trial in range(pairs):
        rng = np.random.default_rng(seed + trial)

        def cplx(shape):
            return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

        x = DenseTensor(labels, cplx((9, 6)))
        y = DenseTensor(labels, cplx((4, 4)))
        lhs = np.vdot(truncate_modes(x, spec).data, y.data)
        rhs = np.vdot(x.data, pad_modes(y, spec, full).data)
        max_trunc = max(max_trunc, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))

        u = DenseTensor((DimLabel.X, DimLabel.Y), cplx((8, 5)))
        v = DenseTensor((DimLabel.KX, DimLabel.KY), cplx((8, 5)))
        lhs = np.vdot(fft_dims(u, (DimLabel.X, DimLabel.Y)).data, v.data)
        adj = ifft_dims(v, (DimLabel.KX, DimLabel.KY)).data * (8 * 5)
        rhs = np.vdot(u.data, adj)
        max_fft = max(max_fft, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return {"truncate_pad_max_err": max_trunc, "fft_max_err": max_fft}


def drive_comm_volume(comm: Communicator, opts: dict) -> Optional[dict]:
    """Measured re-partition traffic vs the exact predicted volume."""
    config = config_from_opts(opts)
    batch = opts.get("batch", 1)
    seed = opts["seed"]
    params = init_params(config, seed)
    local_params = shard_params(params, config, comm.rank)

    rng = np.random.default_rng(seed + comm.rank)
    shape = (batch, config.hidden_channels, config.x_partition().extent_of(comm.rank),
             config.ny, config.nz, config.nt)
    hidden = DenseTensor(DATA_LABELS, rng.standard_normal(shape).astype(config.dtype.np_dtype))

    before = comm.stats.snapshot()
    fno_block_forward(comm, hidden, local_params.blocks[0], config, label="vol")
    block_delta = comm.stats.minus(before).get(REPARTITION)
    block_total = comm.allreduce_sum_scalar(float(block_delta.elements), label="vol.b")
    block_bytes = comm.allreduce_sum_scalar(float(block_delta.bytes), label="vol.bb")

    x_local = slice_local(
        _rng_input(config, batch, seed + 1), config.x_partition(), comm.rank
    )
    before = comm.stats.snapshot()
    fno_forward(comm, x_local, local_params, config)
    fwd_delta = comm.stats.minus(before).get(REPARTITION)
    fwd_total = comm.allreduce_sum_scalar(float(fwd_delta.elements), label="vol.f")

    if comm.rank != 0:
        return None
    predicted = predicted_block_volume(config, batch)
    return {
        "block_repart_calls_per_rank": block_delta.calls,
        "block_elements_total": int(block_total),
        "block_bytes_total": int(block_bytes),
        "forward_repart_calls_per_rank": fwd_delta.calls,
        "forward_elements_total": int(fwd_total),
        "predicted_per_repartition": predicted.per_repartition_elements,
        "predicted_per_block": predicted.per_block_elements,
        "predicted_per_forward": predicted.per_forward_elements,
        "predicted_naive": predicted.naive_per_repartition_elements,
        "reduction_ratio": predicted.reduction_ratio,
        "bytes_per_element": predicted.bytes_per_element,
    }


def drive_scale(comm: Communicator, opts: dict) -> Optional[dict]:
    """Timed forward / forward+backward iterations with comm accounting."""
    config = config_from_opts(opts)
    batch = opts.get("batch", 1)
    iters = max(5, opts.get("iters", 5))
    seed = opts["seed"]
    params = shard_params(init_params(config, seed), config, comm.rank)
    rng = np.random.default_rng(seed + comm.rank)
    shape = (batch, config.in_channels, config.x_partition().extent_of(comm.rank),
             config.ny, config.nz, config.nt)
    x_local = DenseTensor(DATA_LABELS, rng.standard_normal(shape).astype(config.dtype.np_dtype))

    fno_forward(comm, x_local, params, config)  # warm-up, discarded
    forward_times = []
    before = comm.stats.snapshot()
    for _ in range(iters):
        t0 = time.perf_counter()
        fno_forward(comm, x_local, params, config)
        forward_times.append(time.perf_counter() - t0)
    fwd_delta = comm.stats.minus(before).get(REPARTITION)
    fwd_bytes_total = comm.allreduce_sum_scalar(float(fwd_delta.bytes), label="sc.b")

    cache = ForwardCache()
    y = fno_forward(comm, x_local, params, config, cache=cache)
    fno_backward(comm, DenseTensor(y.labels, y.data), params, config, cache)  # warm-up
    both_times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        cache = ForwardCache()
        y = fno_forward(comm, x_local, params, config, cache=cache)
        fno_backward(comm, DenseTensor(y.labels, y.data), params, config, cache)
        both_times.append(time.perf_counter() - t0)

    if comm.rank != 0:
        return None
    return {
        "wall_forward_s": statistics.median(forward_times),
        "wall_fwd_bwd_s": statistics.median(both_times),
        "repart_bytes_forward_total": int(fwd_bytes_total),
        "nx_local": config.x_partition().extent_of(0),
        "iters": iters,
    }


def make_dataset(
    config: FnoConfig, samples: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic problem: white-noise inputs pushed through a fixed random
    truncated-spectral propagator (an operator the network can represent)."""
    rng = np.random.default_rng(seed)
    keep = [
        retained_indices(n, config.modes.count(k))
        for n, k in zip(config.grid, (DimLabel.KX, DimLabel.KY, DimLabel.KZ, DimLabel.KT))
    ]
    r_shape = tuple(len(k) for k in keep)
    scale = 1.0 / np.sqrt(2.0 * config.in_channels)
    propagator = scale * (
        rng.standard_normal((config.out_channels, config.in_channels) + r_shape)
        + 1j * rng.standard_normal((config.out_channels, config.in_channels) + r_shape)
    )
    inputs = rng.standard_normal((samples, config.in_channels) + config.grid)
    spectra = np.fft.fftn(inputs, axes=(2, 3, 4, 5))
    mesh = np.ix_(np.arange(samples), np.arange(config.in_channels), *keep)
    truncated = spectra[mesh]
    mixed = np.einsum("bixyzt,oixyzt->boxyzt", truncated, propagator, optimize=True)
    padded = np.zeros(
        (samples, config.out_channels) + config.grid, dtype=mixed.dtype
    )
    padded[np.ix_(np.arange(samples), np.arange(config.out_channels), *keep)] = mixed
    targets = np.fft.ifftn(padded, axes=(2, 3, 4, 5)).real
    real = config.dtype.np_dtype
    return inputs.astype(real), np.ascontiguousarray(targets).astype(real)


def drive_train(comm: Communicator, opts: dict) -> Optional[dict]:
    """Full training run on the synthetic spectral-propagator problem.

    Every rank regenerates the identical dataset from the seed and works on
    its x slab; metrics are globally reduced, so the emitted rows are
    rank-count-invariant and contain no wall-clock values.
    """
    config = config_from_opts(opts)
    seed = opts["seed"]
    n_train = opts.get("train_samples", 200)
    n_test = opts.get("test_samples", 50)
    batch = opts.get("batch", 10)
    lr = opts.get("lr", 2e-3)
    epochs = opts.get("epochs", 50)
    stop_r2 = opts.get("early_stop_r2")

    inputs, targets = make_dataset(config, n_train + n_test, seed + 9000)
    xpart = config.x_partition()
    my_x = xpart.range_of(comm.rank).as_slice()

    def local_pair(lo: int, hi: int) -> tuple[DenseTensor, DenseTensor]:
        return (
            DenseTensor(DATA_LABELS, inputs[lo:hi, :, my_x]),
            DenseTensor(DATA_LABELS, targets[lo:hi, :, my_x]),
        )

    params = shard_params(init_params(config, seed), config, comm.rank)
    state = AdamState()

    test_lo = n_train
    test_targets_local = targets[test_lo:, :, my_x]
    local_sum = float(np.sum(test_targets_local))
    total_sum = comm.allreduce_sum_scalar(local_sum, label="tr.mean")
    test_count = global_output_count(config, n_test)
    test_mean = total_sum / test_count

    def evaluate() -> tuple[float, float, float]:
        sse = sae = 0.0
        for lo in range(test_lo, n_train + n_test, batch):
            hi = min(lo + batch, n_train + n_test)
            x_local, t_local = local_pair(lo, hi)
            pred = fno_forward(comm, x_local, params, config)
            resid = pred.data - t_local.data
            sse += float(np.sum(resid * resid))
            sae += float(np.sum(np.abs(resid)))
        sst_local = float(np.sum((test_targets_local - test_mean) ** 2))
        sse = comm.allreduce_sum_scalar(sse, label="ev.sse")
        sae = comm.allreduce_sum_scalar(sae, label="ev.sae")
        sst = comm.allreduce_sum_scalar(sst_local, label="ev.sst")
        return sse / test_count, sae / test_count, 1.0 - sse / sst

    metrics = []
    mse0, mae0, r20 = evaluate()
    # epoch 0 is the untrained model; there is no train loss yet
    metrics.append({"epoch": 0, "train_mse_median": None,
                    "test_mse": mse0, "test_mae": mae0, "test_r2": r20})
    for epoch in range(1, epochs + 1):
        losses = []
        for lo in range(0, n_train, batch):
            hi = min(lo + batch, n_train)
            x_local, t_local = local_pair(lo, hi)
            params, loss = train_step(comm, x_local, t_local, params, state, lr, config)
            losses.append(loss)
        mse, mae, r2 = evaluate()
        metrics.append({"epoch": epoch, "train_mse_median": statistics.median(losses),
                        "test_mse": mse, "test_mae": mae, "test_r2": r2})
        if stop_r2 is not None and r2 > stop_r2:
            break

    if opts.get("checkpoint"):
        full = gather_params(comm, params, config)
        if comm.rank == 0:
            save_checkpoint(opts["checkpoint"], full, config, seed)
    if comm.rank != 0:
        return None
    return {"metrics": metrics, "epochs_run": metrics[-1]["epoch"]}


DRIVERS: dict[str, Callable] = {
    "parity": drive_parity_forward,
    "adjoint": drive_adjoint,
    "gradient": drive_gradient,
    "commvolume": drive_comm_volume,
    "scale": drive_scale,
    "train": drive_train,
}


# ---------------------------------------------------------------------------
# Launch over either transport
# ---------------------------------------------------------------------------


def run_distributed(
    driver: str,
    opts: dict,
    world_size: int,
    transport: str = "inproc",
    timeout: float = 300.0,
) -> dict:
    """Run a named driver on every rank; return rank 0's result dict."""
    if driver not in DRIVERS:
        raise KeyError(f"unknown driver {driver!r}")
    if transport == "inproc":
        results = run_ranks(
            world_size, lambda comm: DRIVERS[driver](comm, opts), timeout=timeout
        )
        return results[0]
    if transport != "proc":
        raise ValueError(f"unknown transport {transport!r}")
    base_port = pick_base_port(world_size)
    procs = []
    for rank in range(world_size):
        cmd = [
            sys.executable, "-m", "distfno.cli", "_worker",
            "--driver", driver, "--rank", str(rank),
            "--world-size", str(world_size), "--port", str(base_port),
            "--opts", json.dumps(opts),
        ]
        procs.append(
            subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        )
    outputs = []
    for rank, proc in enumerate(procs):
        out, err = proc.communicate(timeout=timeout)
        if proc.returncode != 0:
            for other in procs:
                other.kill()
            raise RuntimeError(
                f"rank {rank} worker failed:\n{err.decode(errors='replace')}"
            )
        outputs.append(out)
    return json.loads(outputs[0].decode())


def worker_main(driver: str, rank: int, world_size: int, port: int, opts: dict) -> None:
    """Entry point for one socket-transport rank process."""
    endpoint = connect_socket_mesh(rank, world_size, port)
    comm = Communicator(endpoint)
    try:
        result = DRIVERS[driver](comm, opts)
        if rank == 0:
            print(json.dumps(result))
    finally:
        comm.close()


# ---------------------------------------------------------------------------
# CSV + fitting helpers
# ---------------------------------------------------------------------------


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """UTF-8, comma-separated, LF line endings; floats at full precision."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares y = c0 + c1 x; returns (c0, c1, R^2)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    c1, c0 = np.polyfit(x, y, 1)
    predicted = c0 + c1 * x
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(c0), float(c1), r2


# ---------------------------------------------------------------------------
# Taskpool harness
# ---------------------------------------------------------------------------


@dataclass
class TaskpoolReport:
    sweep: list                  # (n_tasks, submit_seconds)
    fit_r2: float
    ratio_last_doubling: Optional[float]
    sleep_efficiency: Optional[float]


def run_taskpool_bench(
    store_root: str,
    pool_size: int,
    task_counts: Sequence[int],
    sleep_tasks: int = 8,
    sleep_seconds: float = 2.0,
    sleep_workers: int = 8,
    run_sleep_demo: bool = True,
) -> TaskpoolReport:
    """Submission-time sweep plus the sleep-task efficiency demo."""
    store = ObjectStore(store_root)
    sweep = []
    with TaskPool(store, pool_size) as pool:
        for n in task_counts:
            args = [[str(i).encode()] for i in range(n)]
            handle = pool.submit_job("noop", args)
            sweep.append((n, handle.submit_seconds))
            handle.wait()

    fit_points = [(n, t) for n, t in sweep if n >= 64]
    if len(fit_points) >= 3:
        _, _, fit_r2 = linear_fit([p[0] for p in fit_points], [p[1] for p in fit_points])
    else:
        fit_r2 = float("nan")
    times = dict(sweep)
    ratio = times[2048] / times[1024] if 2048 in times and 1024 in times else None

    efficiency = None
    if run_sleep_demo:
        with TaskPool(store, sleep_workers) as pool:
            args = [[f"{sleep_seconds}".encode()] for _ in range(sleep_tasks)]
            handle = pool.submit_job("sleep", args)
            timings = handle.wait()
            efficiency = weak_scaling_efficiency(
                timings.durations, sleep_workers, timings.makespan
            )
    return TaskpoolReport(sweep, fit_r2, ratio, efficiency)
