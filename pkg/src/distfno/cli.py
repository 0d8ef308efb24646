"""Command-line entry point: parity suites, scaling benchmarks, a training
demo on synthetic data, and the task-pool benchmark.

Exit codes: 0 all checks passed, 1 an assertion/suite failed, 2 usage or
configuration error (argparse errors and infeasible partitions included).
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile

from . import bench
from .errors import (
    DimensionMismatchError,
    InfeasiblePartitionError,
    NonFiniteLossError,
    ShapeMismatchError,
)

_CONFIG_ERRORS = (InfeasiblePartitionError, ShapeMismatchError, DimensionMismatchError)

PARITY_CSV_HEADER = ("suite", "case", "value", "tolerance", "status")
SCALE_CSV_HEADER = (
    "mode", "world_size", "transport", "nx_local", "ny", "nz", "nt", "batch",
    "iters", "wall_forward_s", "wall_fwd_bwd_s", "repart_bytes_forward_total",
    "efficiency",
)
TRAIN_CSV_HEADER = ("epoch", "train_mse_median", "test_mse", "test_mae", "test_r2")
TASKPOOL_CSV_HEADER = ("kind", "n_tasks", "workers", "value")


def _ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part != ""]


def _dtype(text: str) -> str:
    return {"f32": "real32", "f64": "real64"}[text]


def _add_model_flags(p: argparse.ArgumentParser, default_activation: str = "gelu"):
    p.add_argument("--grid", default="16,16,16,8",
                   help="Nx,Ny,Nz,Nt extents (per-rank Nx in weak scaling)")
    p.add_argument("--channels", type=int, default=4, help="hidden channel width")
    p.add_argument("--in-channels", type=int, default=None)
    p.add_argument("--out-channels", type=int, default=None)
    p.add_argument("--modes", default="4,4,4,3", help="retained modes mx,my,mz,mt")
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--activation", choices=("relu", "gelu", "identity"),
                   default=default_activation)
    p.add_argument("--transport", choices=("inproc", "proc"), default="inproc")
    p.add_argument("--out", default=None, help="CSV report path")


def _model_opts(args, workers: int) -> dict:
    grid = _ints(args.grid)
    modes = _ints(args.modes)
    if len(grid) != 4 or len(modes) != 4:
        raise DimensionMismatchError("--grid and --modes take four comma-separated ints")
    opts = {
        "grid": grid,
        "modes": modes,
        "channels": args.channels,
        "blocks": args.blocks,
        "dtype": _dtype(args.dtype),
        "seed": args.seed,
        "batch": args.batch,
        "activation": args.activation,
        "workers": workers,
    }
    if args.in_channels is not None:
        opts["in_channels"] = args.in_channels
    if args.out_channels is not None:
        opts["out_channels"] = args.out_channels
    return opts


# ---------------------------------------------------------------------------
# parity
# ---------------------------------------------------------------------------


def cmd_parity(args) -> int:
    workers = args.workers
    opts = _model_opts(args, workers)
    bench.config_from_opts(opts)  # validate before launching anything
    transport = args.transport
    tol_parity = 1e-10 if opts["dtype"] == "real64" else 1e-4
    cases = []  # (suite, case, value, tolerance, ok)

    for p in sorted({1, workers}):
        p_opts = dict(opts, workers=p)
        result = bench.run_distributed("parity", p_opts, p, transport)
        cases.append(("oracle-parity", f"P={p}", result["max_rel_err"], tol_parity,
                      result["max_rel_err"] < tol_parity))

    adj = bench.run_distributed(
        "adjoint", {"seed": opts["seed"], "pairs": 20, "workers": workers},
        workers, transport,
    )
    local = bench.local_adjoint_errors(opts["seed"], pairs=20)
    for case, value in (
        ("broadcast/reduce", adj["broadcast_reduce_max_err"]),
        ("repartition", adj["repartition_max_err"]),
        ("truncate/pad", local["truncate_pad_max_err"]),
        ("fft", local["fft_max_err"]),
    ):
        cases.append(("adjoint", case, value, 1e-12, value < 1e-12))

    grad_opts = {
        "grid": [8, 8, 8, 4], "modes": [2, 2, 2, 2], "channels": 2,
        "blocks": 2, "dtype": "real64", "seed": opts["seed"], "batch": 1,
        "activation": opts["activation"], "workers": workers, "directions": 20,
    }
    grad = bench.run_distributed("gradient", grad_opts, workers, transport)
    cases.append(("gradient", "fd-vs-adjoint", grad["max_rel_err"], 1e-5,
                  grad["max_rel_err"] < 1e-5))

    vol = bench.run_distributed("commvolume", opts, workers, transport)
    cases.append(("comm-volume", "events-per-block",
                  vol["block_repart_calls_per_rank"], 2,
                  vol["block_repart_calls_per_rank"] == 2))
    cases.append(("comm-volume", "block-elements-exact",
                  vol["block_elements_total"], vol["predicted_per_block"],
                  vol["block_elements_total"] == vol["predicted_per_block"]))
    cases.append(("comm-volume", "forward-elements-exact",
                  vol["forward_elements_total"], vol["predicted_per_forward"],
                  vol["forward_elements_total"] == vol["predicted_per_forward"]))

    all_ok = True
    for suite, case, value, tol, ok in cases:
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'} [{suite}] {case}: value={value} "
              f"(threshold {tol})")
    if args.out:
        bench.write_csv(
            args.out, PARITY_CSV_HEADER,
            [(s, c, v, t, "pass" if ok else "fail") for s, c, v, t, ok in cases],
        )
        print(f"report written to {args.out}")
    if not all_ok:
        print("parity: FAILURES above", file=sys.stderr)
        return 1
    print(f"parity: all {len(cases)} cases passed over 4 suites")
    return 0


# ---------------------------------------------------------------------------
# scale
# ---------------------------------------------------------------------------


def cmd_scale(args) -> int:
    worker_counts = _ints(args.workers)
    modes = ("weak", "strong") if args.mode == "both" else (args.mode,)
    rows = []
    for mode in modes:
        base_forward = None
        for p in worker_counts:
            opts = _model_opts(args, p)
            if mode == "weak":
                opts["grid"] = [opts["grid"][0] * p] + opts["grid"][1:]
            opts["iters"] = args.iters
            bench.config_from_opts(opts)  # raises on infeasible P before launch
            result = bench.run_distributed("scale", opts, p, args.transport)
            t_fwd = result["wall_forward_s"]
            if base_forward is None:
                base_forward = t_fwd * (p if mode == "strong" else 1)
                # baseline is T(1) when 1 is in the list; otherwise the
                # smallest measured count scaled to its ideal serial time
            efficiency = (
                base_forward / t_fwd if mode == "weak" else base_forward / (p * t_fwd)
            )
            rows.append((
                mode, p, args.transport, result["nx_local"],
                opts["grid"][1], opts["grid"][2], opts["grid"][3], args.batch,
                result["iters"], t_fwd, result["wall_fwd_bwd_s"],
                result["repart_bytes_forward_total"], efficiency,
            ))
            print(f"{mode} P={p}: forward {t_fwd * 1e3:.2f} ms, "
                  f"fwd+bwd {result['wall_fwd_bwd_s'] * 1e3:.2f} ms, "
                  f"efficiency {efficiency:.3f}")
    out = args.out or "scale.csv"
    bench.write_csv(out, SCALE_CSV_HEADER, rows)
    print(f"scale results written to {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    opts = _model_opts(args, args.workers)
    opts.update({
        "train_samples": args.train_samples,
        "test_samples": args.test_samples,
        "batch": args.batch_size,
        "lr": args.lr,
        "epochs": args.epochs,
        "early_stop_r2": args.early_stop_r2,
        "checkpoint": args.checkpoint,
    })
    if args.in_channels is None:
        opts["in_channels"] = 1
    if args.out_channels is None:
        opts["out_channels"] = 1
    bench.config_from_opts(opts)
    result = bench.run_distributed("train", opts, args.workers, args.transport,
                                   timeout=3600.0)
    rows = [
        (m["epoch"], m["train_mse_median"], m["test_mse"], m["test_mae"], m["test_r2"])
        for m in result["metrics"]
    ]
    for row in rows:
        train = "-" if row[1] is None else f"{row[1]:.6g}"
        print(f"epoch {row[0]:3d}: train_mse={train} test_mse={row[2]:.6g} "
              f"test_mae={row[3]:.6g} test_r2={row[4]:.6f}")
    out = args.out or "train_metrics.csv"
    bench.write_csv(out, TRAIN_CSV_HEADER, rows)
    print(f"metrics written to {out}")
    if args.checkpoint:
        print(f"checkpoint written to {args.checkpoint}")
    return 0


# ---------------------------------------------------------------------------
# taskpool
# ---------------------------------------------------------------------------


def cmd_taskpool(args) -> int:
    store_root = args.store or tempfile.mkdtemp(prefix="distfno-store-")
    report = bench.run_taskpool_bench(
        store_root,
        pool_size=args.workers,
        task_counts=_ints(args.tasks),
        sleep_tasks=args.demo_tasks,
        sleep_seconds=args.demo_seconds,
        sleep_workers=args.demo_workers,
        run_sleep_demo=not args.skip_demo,
    )
    rows = [("submit", n, args.workers, seconds) for n, seconds in report.sweep]
    for n, seconds in report.sweep:
        print(f"submit n={n:5d}: {seconds:.4f} s")
    rows.append(("fit_r2", "", "", report.fit_r2))
    print(f"linear fit R^2 (n >= 64): {report.fit_r2:.4f}")
    if report.ratio_last_doubling is not None:
        rows.append(("ratio_2048_1024", "", "", report.ratio_last_doubling))
        print(f"submit-time ratio 2048/1024: {report.ratio_last_doubling:.3f}")
    if report.sleep_efficiency is not None:
        rows.append(("sleep_efficiency", args.demo_tasks, args.demo_workers,
                     report.sleep_efficiency))
        print(f"sleep demo efficiency: {report.sleep_efficiency:.4f}")
    out = args.out or "taskpool.csv"
    bench.write_csv(out, TASKPOOL_CSV_HEADER, rows)
    print(f"taskpool results written to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distfno",
        description="Tensor-parallel FNO engine: parity checks, scaling "
                    "benchmarks, synthetic training, and the task-pool demo.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parity", help="oracle parity, adjoint, gradient, and "
                                      "comm-volume suites")
    p.add_argument("--workers", type=int, default=2)
    _add_model_flags(p)
    p.set_defaults(fn=cmd_parity)

    p = sub.add_parser("scale", help="weak/strong scaling benchmark, CSV output")
    p.add_argument("--workers", default="1,2,4", help="comma-separated rank counts")
    p.add_argument("--mode", choices=("weak", "strong", "both"), default="both")
    p.add_argument("--iters", type=int, default=5)
    _add_model_flags(p)
    p.set_defaults(fn=cmd_scale)

    p = sub.add_parser("train", help="train on the synthetic spectral-propagator "
                                     "problem; metrics CSV plus checkpoint")
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--train-samples", type=int, default=200)
    p.add_argument("--test-samples", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--early-stop-r2", type=float, default=None,
                   help="stop once held-out R^2 exceeds this value")
    p.add_argument("--checkpoint", default=None, help="checkpoint directory")
    _add_model_flags(p, default_activation="identity")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("taskpool", help="task submission sweep and sleep-task "
                                        "efficiency demo")
    p.add_argument("--workers", type=int, default=4, help="pool size for the sweep")
    p.add_argument("--tasks", default="16,32,64,128,256,512,1024,2048",
                   help="comma-separated task counts for the sweep")
    p.add_argument("--store", default=None, help="object store directory")
    p.add_argument("--demo-tasks", type=int, default=8)
    p.add_argument("--demo-seconds", type=float, default=2.0)
    p.add_argument("--demo-workers", type=int, default=8)
    p.add_argument("--skip-demo", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_taskpool)

    p = sub.add_parser("_worker")  # internal: one socket-transport rank
    p.add_argument("--driver", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--world-size", type=int, required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--opts", required=True)
    p.set_defaults(fn=_cmd_worker)

    return parser


def _cmd_worker(args) -> int:
    bench.worker_main(
        args.driver, args.rank, args.world_size, args.port, json.loads(args.opts)
    )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLossError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
