"""Benchmark suites: per-op latency tables, the MNIST stage breakdown, and kernels.

Timing protocol: ``rounds`` rounds of ``iterations`` calls each; a row reports
the mean and standard deviation of the per-call time across rounds.
"""

from __future__ import annotations

import hashlib
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import context as C
from . import kernels, nn, wire
from . import tensors as T
from .errors import ShapeTooLarge
from .ring import tables

REFERENCE_SHAPES = (256, 1024, 4096, 8192, 16384)

# Reference latencies in ms, measured on different hardware with a different library.
REFERENCE_UNARY = {
    "negate": (0.07, 0.07, 0.07, 0.13, 0.26),
    "square": (4.29, 4.29, 4.29, 8.49, 17.16),
    "polyval": (10.55, 10.46, 10.51, 21.32, 42.68),
}
REFERENCE_BINARY = {
    "add": (0.08, 0.08, 0.08, 0.16, 0.31),
    "multiply": (4.45, 4.34, 4.43, 8.84, 17.75),
    "sub": (0.08, 0.08, 0.08, 0.15, 0.3),
    "dot": (20.15, 23.96, 28.11, 55.94, 112.36),
    "add_plain": (0.8, 0.86, 1.07, 2.13, 4.19),
    "multiply_plain": (1.75, 1.81, 2.03, 4.02, 7.97),
    "sub_plain": (0.8, 0.86, 1.08, 2.14, 4.21),
    "dot_plain": (17.37, 21.36, 25.63, 51.14, 101.82),
}
# 16 vCPU column of the reference breakdown.
REFERENCE_MNIST = {
    "Key generation": 921.04,
    "Input preparation": 9.8,
    "Convolutional layer evaluation": 237.98,
    "First activation (square)": 8.42,
    "FC1": 575.34,
    "Second activation (square)": 4.2,
    "FC2": 70.36,
    "Full forward step": 887.06,
}
MNIST_ROWS = tuple(REFERENCE_MNIST)
STAGE_ROWS = {
    "conv": "Convolutional layer evaluation",
    "square1": "First activation (square)",
    "FC1": "FC1",
    "square2": "Second activation (square)",
    "FC2": "FC2",
}
SUITES = ("unary", "binary", "mnist", "kernels")


@dataclass
class Row:
    name: str
    shape: str
    mean_ms: float
    std_ms: float
    rounds: int
    iterations: int
    worker_count: int
    profile: str
    reference_ms: float | None = None
    digest: str | None = None


@dataclass
class BenchReport:
    suite: str
    environment: dict
    rows: list[Row] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "environment": self.environment, "rows": [asdict(r) for r in self.rows]}

    def table(self) -> str:
        head = ("operation", "shape", "mean ms", "std ms", "reference (different hardware)")
        body = [
            (r.name, r.shape, f"{r.mean_ms:.3f}", f"{r.std_ms:.3f}", "-" if r.reference_ms is None else f"{r.reference_ms:g}")
            for r in self.rows
        ]
        widths = [max(len(line[i]) for line in (head, *body)) for i in range(len(head))]
        fmt = "  ".join(f"{{:<{w}}}" if i < 2 else f"{{:>{w}}}" for i, w in enumerate(widths))
        env = ", ".join(f"{k}={v}" for k, v in self.environment.items())
        lines = [f"# {self.suite} ({env})", fmt.format(*head), fmt.format(*("-" * w for w in widths))]
        lines += [fmt.format(*line) for line in body]
        return "\n".join(lines)


def environment(profile: str, backend: str, workers: int) -> dict:
    return {
        "cpu_count": os.cpu_count(),
        "profile": profile,
        "backend": backend,
        "workers": workers,
        "kernels": kernels.active_name(),
        "python": platform.python_version(),
    }


def measure(fn: Callable[[], object], rounds: int, iterations: int) -> tuple[float, float, object]:
    """(mean ms, std ms, last result) over ``rounds`` × ``iterations`` calls."""
    per_call = []
    out = None
    for _ in range(rounds):
        start = time.perf_counter()
        for _ in range(iterations):
            out = fn()
        per_call.append((time.perf_counter() - start) * 1e3 / iterations)
    std = statistics.stdev(per_call) if len(per_call) > 1 else 0.0
    return statistics.fmean(per_call), std, out


def digest(value) -> str | None:
    """SHA-256 of the wire encoding (real backend only)."""
    if isinstance(value, T.EncryptedVector):
        value = value.ct
    if isinstance(value, wire.Ciphertext):
        return hashlib.sha256(wire.serialize_ciphertext(value)).hexdigest()
    return None


def check_shapes(shapes, slots: int) -> None:
    too_big = [s for s in shapes if s > slots]
    if too_big:
        raise ShapeTooLarge(f"shapes {too_big} exceed the {slots} slots of one ciphertext")


def default_shapes(slots: int) -> list[int]:
    return [s for s in REFERENCE_SHAPES if s <= slots]


def _reference(table: dict, name: str, shape: int) -> float | None:
    if name in table and shape in REFERENCE_SHAPES:
        return table[name][REFERENCE_SHAPES.index(shape)]
    return None


def _op_table(kind: str, a: T.EncryptedVector, b: T.EncryptedVector, plain: np.ndarray) -> dict[str, Callable]:
    if kind == "unary":
        return {
            "negate": lambda: T.negate(a),
            "square": lambda: T.square(a),
            "polyval": lambda: T.polyval(a, [0.0, 1.0, 2.0]),
        }
    return {
        "add": lambda: T.add(a, b),
        "multiply": lambda: T.mul(a, b),
        "sub": lambda: T.sub(a, b),
        "dot": lambda: T.dot(a, b),
        "add_plain": lambda: T.add(a, plain),
        "multiply_plain": lambda: T.mul(a, plain),
        "sub_plain": lambda: T.sub(a, plain),
        "dot_plain": lambda: T.dot_plain(a, plain),
    }


def run_ops(kind: str, ctx: C.Context, shapes, rounds: int, iterations: int, seed: int = 0) -> BenchReport:
    shapes = list(shapes) if shapes else default_shapes(ctx.slot_count)
    check_shapes(shapes, ctx.slot_count)
    report = BenchReport(kind, environment(ctx.params.name, ctx.backend_kind, ctx.worker_count))
    table = REFERENCE_UNARY if kind == "unary" else REFERENCE_BINARY
    rng = np.random.default_rng(seed)
    for shape in shapes:
        a = T.encrypt_vector(ctx, rng.uniform(-1, 1, shape))
        b = T.encrypt_vector(ctx, rng.uniform(-1, 1, shape))
        plain = rng.uniform(-1, 1, shape)
        for name, fn in _op_table(kind, a, b, plain).items():
            mean, std, out = measure(fn, rounds, iterations)
            report.rows.append(Row(name, f"[{shape}]", mean, std, rounds, iterations, ctx.worker_count,
                                   ctx.params.name, _reference(table, name, shape), digest(out)))
    return report


def run_mnist(profile: str, backend: str, workers: int, rounds: int, iterations: int, seed: int = 0,
              model: nn.Model | None = None, image=None) -> BenchReport:
    model = model or nn.load_fixture_model()
    image = nn.load_fixture_images()[0] if image is None else image
    report = BenchReport("mnist", environment(profile, backend, workers))

    def keygen():
        return C.create_context(profile, seed=seed, backend=backend, workload=model, worker_count=workers)

    samples: dict[str, list[float]] = {name: [] for name in MNIST_ROWS}
    digests: dict[str, str | None] = {}
    for _ in range(rounds):
        sums = dict.fromkeys(MNIST_ROWS, 0.0)
        for _ in range(iterations):
            t0 = time.perf_counter()
            ctx = keygen()
            t1 = time.perf_counter()
            ev = nn.prepare_input(ctx, model, image, seed=seed)
            t2 = time.perf_counter()
            sums["Key generation"] += t1 - t0
            sums["Input preparation"] += t2 - t1
            last = t2
            for stage, out in nn.forward_stages(ctx, model, ev):
                now = time.perf_counter()
                sums[STAGE_ROWS[stage]] += now - last
                last = now
            sums["Full forward step"] += last - t2
            digests["Full forward step"] = digest(out)
        for name in MNIST_ROWS:
            samples[name].append(sums[name] * 1e3 / iterations)
    shape = f"{model.input_shape[0]}x{model.input_shape[1]}"
    for name in MNIST_ROWS:
        vals = samples[name]
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        report.rows.append(Row(name, shape, statistics.fmean(vals), std, rounds, iterations, workers, profile,
                               REFERENCE_MNIST[name], digests.get(name)))
    return report


def run_kernels(profile: str, rounds: int, iterations: int, workers: int = 1, seed: int = 0) -> BenchReport:
    """Compiled vs numpy-fallback NTT and modular multiply on one full-chain polynomial."""
    from .scheme import profile as get_profile

    params = get_profile(profile)
    tab = tables(params.degree, params.ring.primes)
    rng = np.random.default_rng(seed)
    a = np.stack([rng.integers(0, p, params.degree, dtype=np.uint64) for p in params.ring.primes])
    b = np.stack([rng.integers(0, p, params.degree, dtype=np.uint64) for p in params.ring.primes])
    report = BenchReport("kernels", environment(profile, "real", workers))
    shape = f"{len(params.ring.primes)}x{params.degree}"
    impls = ["fallback"] + (["compiled"] if kernels.compiled is not None else [])
    results = {}
    for impl in impls:
        with kernels.using(impl), kernels.parallelism(workers):
            for name, fn in (("ntt_forward", lambda: tab.forward(a)), ("ntt_inverse", lambda: tab.inverse(a)),
                             ("mulmod", lambda: tab.mul(a, b))):
                mean, std, out = measure(fn, rounds, iterations)
                results.setdefault(name, []).append(out)
                report.rows.append(Row(f"{name} [{impl}]", shape, mean, std, rounds, iterations, workers, profile,
                                       None, hashlib.sha256(out.tobytes()).hexdigest()))
    for name, outs in results.items():
        if any(not np.array_equal(outs[0], o) for o in outs[1:]):
            raise AssertionError(f"{name}: compiled and fallback kernels disagree")
    return report
