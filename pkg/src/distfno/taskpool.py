"""Clusterless task execution at desk scale.

Work is described by serialized task specs against a write-once,
filesystem-backed object store; results come back as remote references that
``fetch`` resolves.  Callables are named by registry key (or an importable
``module:function`` path), never by serialized code.  Workers are OS
processes from a fixed pool and communicate only through the store.

Store layout: ``<root>/jobs/<job-id>/tasks/<task-id>/{spec,args,out,err}``
plus one job-level ``spec`` written once per job and ``broadcast/<id>`` blobs
for values uploaded once and shared by many tasks.
"""

from __future__ import annotations

import importlib
import os
import pickle
import tempfile
import time
import traceback
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Callable, Optional, Sequence

from .errors import (
    FetchTimeoutError,
    StoreKeyExistsError,
    TaskFailedError,
    UnknownCallableError,
)

_POLL_INTERVAL = 0.002
DEFAULT_FETCH_TIMEOUT = 120.0


class ObjectStore:
    """Directory-backed key -> blob map with atomic, write-once semantics."""

    def __init__(self, root: str):
        self.root = os.path.abspath(root)
        os.makedirs(self.root, exist_ok=True)
        self.writes = 0
        self.reads = 0

    def _path(self, key: str) -> str:
        return os.path.join(self.root, key)

    def exists(self, key: str) -> bool:
        return os.path.exists(self._path(key))

    def put(self, key: str, data: bytes) -> None:
        if not self.put_if_absent(key, data):
            raise StoreKeyExistsError(f"store key {key!r} is write-once")

    def put_if_absent(self, key: str, data: bytes) -> bool:
        """Atomically write via temp-file-then-rename; False when the key is
        already present (the existing value wins)."""
        path = self._path(key)
        if os.path.exists(path):
            return False
        os.makedirs(os.path.dirname(path), exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.writes += 1
        return True

    def get(self, key: str) -> bytes:
        self.reads += 1
        with open(self._path(key), "rb") as fh:
            return fh.read()


@dataclass
class RemoteRef:
    """Object-store-backed future for a task output (or broadcast value)."""

    key: str
    store: ObjectStore
    cached: Optional[bytes] = None

    def error_key(self) -> str:
        return self.key[: -len("/out")] + "/err" if self.key.endswith("/out") else ""

    def fetch(self, timeout: float = DEFAULT_FETCH_TIMEOUT) -> bytes:
        """Block until the referenced payload exists; idempotent and cached."""
        if self.cached is not None:
            return self.cached
        err_key = self.error_key()
        deadline = time.monotonic() + timeout
        while True:
            if self.store.exists(self.key):
                self.cached = self.store.get(self.key)
                return self.cached
            if err_key and self.store.exists(err_key):
                raise TaskFailedError(self.store.get(err_key).decode(errors="replace"))
            if time.monotonic() > deadline:
                raise FetchTimeoutError(f"no value at {self.key!r} after {timeout}s")
            time.sleep(_POLL_INTERVAL)


def fetch(ref: RemoteRef, timeout: float = DEFAULT_FETCH_TIMEOUT) -> bytes:
    return ref.fetch(timeout=timeout)


def broadcast_value(store: ObjectStore, payload: bytes) -> RemoteRef:
    """Upload a payload once; the returned ref can be an argument to any
    number of tasks without further uploads."""
    key = f"broadcast/{uuid.uuid4().hex}"
    store.put(key, payload)
    return RemoteRef(key, store)


# ---------------------------------------------------------------------------
# Callable registry
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, Callable] = {}


def register(key: str):
    def decorator(fn: Callable) -> Callable:
        _REGISTRY[key] = fn
        return fn
    return decorator


def resolve_callable(key: str) -> Callable:
    if key in _REGISTRY:
        return _REGISTRY[key]
    if ":" in key:
        module_name, _, attr = key.partition(":")
        try:
            module = importlib.import_module(module_name)
            return getattr(module, attr)
        except (ImportError, AttributeError) as exc:
            raise UnknownCallableError(f"cannot import callable {key!r}: {exc}") from None
    raise UnknownCallableError(f"no registered callable {key!r}")


@register("noop")
def _task_noop(*_args: bytes) -> bytes:
    return b""


@register("echo")
def _task_echo(payload: bytes = b"") -> bytes:
    return payload


@register("hello")
def _task_hello(name: bytes = b"world") -> bytes:
    return b"hello from task " + name


@register("sleep")
def _task_sleep(seconds: bytes) -> bytes:
    time.sleep(float(seconds.decode()))
    return seconds


@register("fail")
def _task_fail(message: bytes = b"task failure") -> bytes:
    raise RuntimeError(message.decode(errors="replace"))


@register("sum_bytes")
def _task_sum_bytes(*payloads: bytes) -> bytes:
    return str(sum(sum(p) for p in payloads)).encode()


# ---------------------------------------------------------------------------
# Task specs and the worker entry point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    callable_key: str
    args_key: str
    out_key: str

    def to_text(self) -> str:
        return (
            f"task_id={self.task_id}\ncallable={self.callable_key}\n"
            f"args={self.args_key}\nout={self.out_key}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "TaskSpec":
        fields = dict(
            line.split("=", 1) for line in text.splitlines() if "=" in line
        )
        return cls(fields["task_id"], fields["callable"], fields["args"], fields["out"])


def _encode_args(args: Sequence) -> bytes:
    encoded = []
    for arg in args:
        if isinstance(arg, RemoteRef):
            encoded.append(("ref", arg.key))
        elif isinstance(arg, (bytes, bytearray)):
            encoded.append(("raw", bytes(arg)))
        else:
            raise TypeError(f"task arguments must be bytes or RemoteRef, got {type(arg)}")
    return pickle.dumps(encoded, protocol=pickle.HIGHEST_PROTOCOL)


def _decode_args(blob: bytes, store: ObjectStore) -> list[bytes]:
    out = []
    for kind, value in pickle.loads(blob):
        if kind == "ref":
            out.append(RemoteRef(value, store).fetch())
        else:
            out.append(value)
    return out


@dataclass
class TaskResult:
    task_id: str
    duration: float
    ok: bool
    skipped: bool = False
    error: str = ""


def _run_task(store_root: str, spec_key: str) -> TaskResult:
    """Worker entry point: resolve, execute, persist.  A task whose output
    key already exists is a no-op (exactly-once per key)."""
    store = ObjectStore(store_root)
    spec = TaskSpec.from_text(store.get(spec_key).decode())
    if store.exists(spec.out_key):
        return TaskResult(spec.task_id, 0.0, ok=True, skipped=True)
    started = time.monotonic()
    err_key = spec.out_key[: -len("/out")] + "/err"
    try:
        fn = resolve_callable(spec.callable_key)
        args = _decode_args(store.get(spec.args_key), store)
        result = fn(*args)
        if not isinstance(result, (bytes, bytearray)):
            raise TypeError(f"task callable returned {type(result)}, expected bytes")
        store.put_if_absent(spec.out_key, bytes(result))
    except BaseException as exc:  # noqa: BLE001 - reported through the store
        message = f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"
        store.put_if_absent(err_key, message.encode())
        return TaskResult(spec.task_id, time.monotonic() - started, ok=False,
                          error=str(exc))
    return TaskResult(spec.task_id, time.monotonic() - started, ok=True)


# ---------------------------------------------------------------------------
# The pool
# ---------------------------------------------------------------------------


@dataclass
class JobTimings:
    durations: list
    makespan: float
    results: list


class JobHandle:
    """Control structure returned by submit_job: one ref per task plus the
    measured submission wall-time."""

    def __init__(self, job_id: str, refs: list, futures: list, submit_seconds: float):
        self.job_id = job_id
        self.refs = refs
        self.submit_seconds = submit_seconds
        self._futures = futures
        self._submit_end = time.monotonic()

    def wait(self, timeout: Optional[float] = None) -> JobTimings:
        """Block until every task finished; makespan is measured from the end
        of submission to the last observed completion."""
        results = []
        last_done = self._submit_end
        for future in self._futures:
            results.append(future.result(timeout=timeout))
            last_done = max(last_done, time.monotonic())
        durations = [r.duration for r in results]
        return JobTimings(durations, last_done - self._submit_end, results)


class TaskPool:
    """Fixed pool of worker processes executing store-described tasks."""

    def __init__(self, store: ObjectStore, workers: int):
        if workers < 1:
            raise ValueError("pool needs at least one worker")
        self.store = store
        self.workers = workers
        self._executor = ProcessPoolExecutor(
            max_workers=workers, mp_context=get_context("fork")
        )

    def submit_job(
        self,
        callable_key: str,
        per_task_args: Sequence[Sequence],
        job_id: Optional[str] = None,
    ) -> JobHandle:
        """Upload one job spec plus n per-task specs/arguments, enqueue the
        tasks, and return a handle with one RemoteRef per task."""
        resolve_callable(callable_key)  # fail fast on unknown callables
        t0 = time.monotonic()
        job_id = job_id or uuid.uuid4().hex[:12]
        n = len(per_task_args)
        # Shared upload, once per job regardless of task count.
        self.store.put_if_absent(
            f"jobs/{job_id}/spec", f"callable={callable_key}\ntasks={n}\n".encode()
        )
        refs, futures = [], []
        for index, args in enumerate(per_task_args):
            task_id = f"t{index:06d}"
            base = f"jobs/{job_id}/tasks/{task_id}"
            spec = TaskSpec(task_id, callable_key, f"{base}/args", f"{base}/out")
            self.store.put_if_absent(f"{base}/args", _encode_args(args))
            self.store.put_if_absent(f"{base}/spec", spec.to_text().encode())
            futures.append(
                self._executor.submit(_run_task, self.store.root, f"{base}/spec")
            )
            refs.append(RemoteRef(spec.out_key, self.store))
        submit_seconds = time.monotonic() - t0
        return JobHandle(job_id, refs, futures, submit_seconds)

    def close(self) -> None:
        self._executor.shutdown(wait=True)

    def __enter__(self) -> "TaskPool":
        return self

    def __exit__(self, *_exc) -> None:
        self.close()


def weak_scaling_efficiency(
    durations: Sequence[float], workers: int, makespan: float
) -> float:
    """(sum of task durations / workers) / makespan."""
    if makespan <= 0:
        return 1.0
    return (sum(durations) / workers) / makespan
