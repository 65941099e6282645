"""Scaling benchmark: grid-state closed form versus micro-coalition
enumeration, with log-space fits of the expected cost laws."""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cube import ResidualGrid
from .exceptions import InputError
from .microgame import ENUMERATION_CAP, MicroGame, enumerate_les, grid_state_shares, les_preset


def time_call(fn: Callable[[], object], repetitions: int = 5, number: int = 1) -> float:
    """Median per-call wall time over ``repetitions`` runs of ``number`` calls,
    after one discarded warm-up."""
    fn()
    runs = []
    for _ in range(max(repetitions, 1)):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        runs.append((time.perf_counter() - t0) / number)
    return statistics.median(runs)


def random_residual(shape: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    r = rng.standard_normal(tuple(shape))
    for ax in range(r.ndim):
        r = r - np.take(r, [0], axis=ax)
    return r


@dataclass
class LogFit:
    """``log t = log c + slope * log(cost)``; ``c_unit`` is the constant with
    the slope pinned to 1."""

    slope: float
    intercept: float
    r2: float
    c_unit: float
    residuals: list[float]


def fit_law(cost: Sequence[float], seconds: Sequence[float]) -> LogFit:
    x = np.log(np.asarray(cost, dtype=np.float64))
    y = np.log(np.asarray(seconds, dtype=np.float64))
    if x.shape[0] < 2:
        raise InputError("need at least two points to fit")
    A = np.vstack([np.ones_like(x), x]).T
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ np.array([a, b])
    tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res**2)) / tot if tot > 0 else 1.0
    return LogFit(float(b), float(a), r2, float(np.exp(np.mean(y - x))), res.tolist())


@dataclass
class BenchRecord:
    k: int
    m: int
    n: int
    grid_seconds: float
    es_seconds: float
    enum_seconds: float | None = None


@dataclass
class BenchResult:
    records: list[BenchRecord] = field(default_factory=list)
    grid_fit: LogFit | None = None
    enum_fit: LogFit | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "m", "n", "grid_seconds", "es_seconds", "enum_seconds"])
            for r in self.records:
                w.writerow([r.k, r.m, r.n, f"{r.grid_seconds:.6g}", f"{r.es_seconds:.6g}",
                            "" if r.enum_seconds is None else f"{r.enum_seconds:.6g}"])

    def summary(self) -> dict:
        out = {}
        for name, fit in (("grid_state", self.grid_fit), ("enumeration", self.enum_fit)):
            if fit is not None:
                out[name] = {"slope": fit.slope, "r2": fit.r2, "c": fit.c_unit}
        return out


def bench_scaling(ks: Sequence[int] = (2, 3), ms: Sequence[int] = range(2, 11), repetitions: int = 5,
                  enum_cap: int = 16, seed: int = 0) -> BenchResult:
    """Time the closed form (Shapley and Equal Surplus presets) on random
    boundary-zeroed residual tables and, up to ``enum_cap`` micro-players,
    full enumeration."""
    ks, ms = list(ks), list(ms)
    if not ks or not ms:
        raise InputError("k and m ranges must be non-empty")
    if enum_cap > ENUMERATION_CAP:
        raise InputError(f"enumeration cap cannot exceed {ENUMERATION_CAP}")
    rng = np.random.default_rng(seed)
    result = BenchResult()
    for k in ks:
        for m in ms:
            mg = MicroGame(ResidualGrid.from_array(random_residual((m + 1,) * k, rng)))
            n = mg.n
            sh, es = les_preset("shapley", n), les_preset("equal_surplus", n)
            rec = BenchRecord(
                k, m, n,
                time_call(lambda: grid_state_shares(mg, sh), repetitions),
                time_call(lambda: grid_state_shares(mg, es), repetitions, number=200),
            )
            if n <= enum_cap:
                rec.enum_seconds = time_call(lambda: enumerate_les(mg, sh), repetitions)
            result.records.append(rec)
    result.grid_fit = fit_law([r.k * (r.m + 1) ** r.k for r in result.records],
                              [r.grid_seconds for r in result.records])
    enum = [r for r in result.records if r.enum_seconds is not None]
    if len(enum) >= 2:
        result.enum_fit = fit_law([r.n * 2.0**r.n for r in enum], [r.enum_seconds for r in enum])
    return result


def enumeration_seconds(n: int, repetitions: int = 3, seed: int = 0) -> float:
    """Enumeration time on a two-feature pot with ``n`` micro-players."""
    if n < 2:
        raise InputError("need at least 2 micro-players")
    m = (n - n // 2, n // 2)
    rng = np.random.default_rng(seed)
    mg = MicroGame(ResidualGrid.from_array(random_residual((m[0] + 1, m[1] + 1), rng)))
    w = les_preset("shapley", n)
    return time_call(lambda: enumerate_les(mg, w), repetitions)
