"""Distributed training step, Adam optimizer, and model checkpoints.

The loss is the mean squared error over every output element globally, so
its value is identical on all ranks and invariant to the rank count.
Replicated encoder/decoder weights are updated from the globally reduced
gradient on every rank with identical arithmetic, which keeps them
bit-identical; that invariant is asserted each step.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .comm import Communicator
from .errors import NonFiniteLossError, ReplicationError
from .fno import (
    FnoConfig,
    FnoGrads,
    FnoParams,
    ForwardCache,
    fno_backward,
    fno_forward,
)
from .spectral import ModeSpec
from .tensor import DenseTensor, DimLabel, DType, bit_equal, tensor_from_bytes, tensor_to_bytes


@dataclass
class AdamState:
    """First/second moment accumulators per parameter, on the real view of
    complex weights so each component is adapted independently."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _real_view(a: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(a):
        return a.view(np.float32 if a.dtype == np.complex64 else np.float64)
    return a


def adam_update(
    state: AdamState, key: str, param: DenseTensor, grad: DenseTensor, lr: float
) -> DenseTensor:
    """One Adam step for a single parameter; returns the updated tensor.

    ``state.step`` must already be advanced by the caller (once per training
    step, shared across parameters).
    """
    p = param.data.copy()
    pv = _real_view(p)
    gv = _real_view(np.ascontiguousarray(grad.data))
    if key not in state.m:
        state.m[key] = np.zeros_like(pv)
        state.v[key] = np.zeros_like(pv)
    m, v = state.m[key], state.v[key]
    m *= state.beta1
    m += (1.0 - state.beta1) * gv
    v *= state.beta2
    v += (1.0 - state.beta2) * gv * gv
    m_hat = m / (1.0 - state.beta1 ** state.step)
    v_hat = v / (1.0 - state.beta2 ** state.step)
    pv -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return DenseTensor(param.labels, p)


def _assert_replicated(comm: Communicator, t: DenseTensor, name: str) -> None:
    reference = comm.broadcast(t if comm.rank == 0 else None, root=0, label=f"repl.{name}")
    if not bit_equal(reference, t):
        raise ReplicationError(
            f"replicated weight {name!r} diverged on rank {comm.rank}"
        )


def global_output_count(config: FnoConfig, batch_size: int) -> int:
    return (
        batch_size
        * config.out_channels
        * config.nx
        * config.ny
        * config.nz
        * config.nt
    )


def train_step(
    comm: Communicator,
    x_local: DenseTensor,
    y_local: DenseTensor,
    params: FnoParams,
    state: AdamState,
    lr: float,
    config: FnoConfig,
) -> tuple[FnoParams, float]:
    """Forward, global MSE, backward, Adam update.  Returns the updated
    parameters and the (rank-identical) loss; raises on a non-finite loss
    before touching any parameter."""
    batch = x_local.shape[0]
    n_total = global_output_count(config, batch)

    cache = ForwardCache()
    pred = fno_forward(comm, x_local, params, config, cache=cache)
    resid = pred.data - y_local.data
    local_sse = float(np.sum(resid * resid))
    total_sse = comm.allreduce_sum_scalar(local_sse, label="loss")
    loss = total_sse / n_total
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"loss is {loss!r}; aborting the step")

    g = DenseTensor(pred.labels, (2.0 / n_total) * resid)
    _, grads = fno_backward(comm, g, params, config, cache)

    state.step += 1
    we = adam_update(state, "we", params.we, grads.we, lr)
    wd = adam_update(state, "wd", params.wd, grads.wd, lr)
    blocks = tuple(
        adam_update(state, f"block{i}", params.blocks[i], grads.blocks[i], lr)
        for i in range(len(params.blocks))
    )
    new_params = FnoParams(we, wd, blocks, sharded=params.sharded)
    _assert_replicated(comm, new_params.we, "we")
    _assert_replicated(comm, new_params.wd, "wd")
    return new_params, loss


def evaluate_metrics(
    comm: Communicator,
    predictions_sse: float,
    abs_err_sum: float,
    target_sq_dev_sum: float,
    count: int,
) -> tuple[float, float, float]:
    """Reduce local accumulators into global (MSE, MAE, R^2)."""
    sse = comm.allreduce_sum_scalar(predictions_sse, label="metric.sse")
    sae = comm.allreduce_sum_scalar(abs_err_sum, label="metric.sae")
    sst = comm.allreduce_sum_scalar(target_sq_dev_sum, label="metric.sst")
    mse = sse / count
    mae = sae / count
    r2 = 1.0 - (sse / sst) if sst > 0 else float("nan")
    return mse, mae, r2


def gather_params(
    comm: Communicator, params: FnoParams, config: FnoConfig
) -> Optional[FnoParams]:
    """Assemble the global parameter set on rank 0 from ky-sharded blocks."""
    if not params.sharded:
        return params if comm.rank == 0 else None
    kypart = config.ky_partition()
    blocks = []
    for i, shard in enumerate(params.blocks):
        full = comm.gather(shard, kypart, root=0, label=f"ckpt.block{i}")
        blocks.append(full)
    if comm.rank != 0:
        return None
    return FnoParams(params.we, params.wd, tuple(blocks), sharded=False)


# ---------------------------------------------------------------------------
# Checkpoints: a directory of DTNS tensor files plus a key=value manifest.
# ---------------------------------------------------------------------------

_MANIFEST = "manifest.txt"


def save_checkpoint(
    directory: str, params: FnoParams, config: FnoConfig, seed: int
) -> None:
    """Write global (unsharded) parameters and the model description."""
    if params.sharded:
        raise ValueError("checkpoints hold global weights; gather shards first")
    os.makedirs(directory, exist_ok=True)
    entries = {
        "extents": ",".join(str(n) for n in config.grid),
        "in_channels": str(config.in_channels),
        "out_channels": str(config.out_channels),
        "hidden_channels": str(config.hidden_channels),
        "modes": ",".join(
            str(config.modes.count(k))
            for k in (DimLabel.KX, DimLabel.KY, DimLabel.KZ, DimLabel.KT)
        ),
        "blocks": str(config.num_blocks),
        "activation": config.activation.value,
        "dtype": config.dtype.value,
        "world_size": str(config.num_ranks),
        "seed": str(seed),
    }
    with open(os.path.join(directory, _MANIFEST), "w", encoding="utf-8") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")
    for name, tensor in params.named().items():
        with open(os.path.join(directory, f"{name}.dtns"), "wb") as fh:
            fh.write(tensor_to_bytes(tensor))


def load_checkpoint(directory: str) -> tuple[FnoParams, FnoConfig, int]:
    entries = {}
    with open(os.path.join(directory, _MANIFEST), encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                entries[key] = value
    grid = tuple(int(v) for v in entries["extents"].split(","))
    modes = tuple(int(v) for v in entries["modes"].split(","))
    config = FnoConfig(
        nx=grid[0], ny=grid[1], nz=grid[2], nt=grid[3],
        in_channels=int(entries["in_channels"]),
        out_channels=int(entries["out_channels"]),
        hidden_channels=int(entries["hidden_channels"]),
        modes=ModeSpec.of_xyzt(*modes),
        num_blocks=int(entries["blocks"]),
        activation=entries["activation"],
        dtype=DType(entries["dtype"]),
        num_ranks=int(entries["world_size"]),
    )

    def read(name: str) -> DenseTensor:
        with open(os.path.join(directory, f"{name}.dtns"), "rb") as fh:
            return tensor_from_bytes(fh.read())

    blocks = tuple(read(f"block{i}") for i in range(config.num_blocks))
    params = FnoParams(read("we"), read("wd"), blocks, sharded=False)
    return params, config, int(entries["seed"])
