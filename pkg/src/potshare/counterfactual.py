"""Counterfactual generators and evaluation harnesses.

The generators are deliberately plain: they search uniformly inside
per-feature ranges and stop at the first point whose aggregated score clears
the target.  Success is always re-checked by :meth:`CfTarget.met` on the
returned point, independently of the search that produced it.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .coalition import CounterfactualPair
from .exceptions import InputError, ParseError
from .models import MinScore, predict_batch


@dataclass(frozen=True)
class CfTarget:
    threshold: float = 0.8

    def score(self, models, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if isinstance(models, (list, tuple)):
            models = MinScore(models)
        return predict_batch(models, X)

    def met(self, models, x) -> bool:
        return bool(self.score(models, x)[0] >= self.threshold)


@dataclass
class CfResult:
    success: bool
    x0: np.ndarray
    x1: np.ndarray | None
    score: float
    evaluations: int
    history: list[float] = field(default_factory=list)

    def pair(self, change_epsilon: float = 1e-12, **kwargs) -> CounterfactualPair:
        if self.x1 is None:
            raise InputError("no counterfactual was found")
        return CounterfactualPair(self.x0, self.x1, change_epsilon, **kwargs)


def _ranges(x0: np.ndarray, ranges):
    if ranges is None:
        lo, hi = np.zeros_like(x0), np.ones_like(x0)
    else:
        lo, hi = (np.asarray(r, dtype=np.float64) for r in ranges)
    if lo.shape != x0.shape or hi.shape != x0.shape or np.any(hi < lo):
        raise InputError("ranges must be (low, high) arrays matching x0 with low <= high")
    return lo, hi


def _fix_categorical(X: np.ndarray, categorical) -> np.ndarray:
    if categorical is not None:
        cat = np.asarray(categorical, bool)
        X[:, cat] = np.round(np.clip(X[:, cat], 0.0, 1.0))
    return X


def sparsify(models, target: CfTarget, x0: np.ndarray, x1: np.ndarray, ranges=None) -> np.ndarray:
    """Greedily revert changed coordinates to baseline while the target holds.

    Smallest range-normalised moves are tried first.
    """
    lo, hi = _ranges(x0, ranges)
    width = np.where(hi > lo, hi - lo, 1.0)
    x = x1.copy()
    order = np.argsort(np.abs(x1 - x0) / width, kind="stable")
    for i in order:
        if x[i] == x0[i]:
            continue
        trial = x.copy()
        trial[i] = x0[i]
        if target.met(models, trial):
            x = trial
    return x


def _finish(models, target, x0, best, evaluations, history, ranges, sparse):
    if best is None:
        return CfResult(False, x0, None, float("nan"), evaluations, history)
    if sparse:
        best = sparsify(models, target, x0, best, ranges)
    score = float(target.score(models, best)[0])
    return CfResult(score >= target.threshold, x0, best, score, evaluations, history)


def random_search_cf(models, x0, target: CfTarget = CfTarget(), budget: int = 1000, seed: int = 0,
                     ranges=None, categorical=None, chunk: int = 256, sparse: bool = False) -> CfResult:
    """Randomised search: each draw replaces a random feature subset with
    uniform values from the feature ranges."""
    if budget < 1:
        raise InputError("budget must be >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    lo, hi = _ranges(x0, ranges)
    if target.met(models, x0):
        return CfResult(True, x0, x0.copy(), float(target.score(models, x0)[0]), 1)
    rng = np.random.default_rng(seed)
    d = x0.shape[0]
    used = 0
    while used < budget:
        c = min(chunk, budget - used)
        sizes = rng.integers(1, d + 1, size=c)
        keys = rng.random((c, d))
        ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
        mask = ranks < sizes[:, None]
        vals = lo + rng.random((c, d)) * (hi - lo)
        X = np.where(mask, vals, x0)
        _fix_categorical(X, categorical)
        scores = target.score(models, X)
        used += c
        hit = np.flatnonzero(scores >= target.threshold)
        if hit.size:
            return _finish(models, target, x0, X[hit[0]], used + 1, [], ranges, sparse)
    return CfResult(False, x0, None, float("nan"), used + 1)


def growing_spheres_cf(models, x0, target: CfTarget = CfTarget(), radii: Sequence[float] = (0.1, 0.2, 0.4, 0.8, 1.6),
                       samples_per_shell: int = 200, seed: int = 0, ranges=None, categorical=None,
                       sparse: bool = False) -> CfResult:
    """Sample shells of increasing radius (in range-normalised units) around
    ``x0`` and return the first sample that meets the target."""
    radii = [float(r) for r in radii]
    if not radii or radii[0] <= 0 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise InputError("radius schedule must be positive and strictly increasing")
    if samples_per_shell < 1:
        raise InputError("samples_per_shell must be >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    lo, hi = _ranges(x0, ranges)
    width = np.where(hi > lo, hi - lo, 1.0)
    if target.met(models, x0):
        return CfResult(True, x0, x0.copy(), float(target.score(models, x0)[0]), 1)
    rng = np.random.default_rng(seed)
    d = x0.shape[0]
    used = 1
    inner = 0.0
    for outer in radii:
        direction = rng.standard_normal((samples_per_shell, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        u = rng.random(samples_per_shell)
        radius = (inner**d + u * (outer**d - inner**d)) ** (1.0 / d)
        X = np.clip(x0 + direction * radius[:, None] * width, lo, hi)
        _fix_categorical(X, categorical)
        scores = target.score(models, X)
        used += samples_per_shell
        hit = np.flatnonzero(scores >= target.threshold)
        if hit.size:
            return _finish(models, target, x0, X[hit[0]], used, [], ranges, sparse)
        inner = outer
    return CfResult(False, x0, None, float("nan"), used)


def genetic_cf(models, x0, target: CfTarget = CfTarget(), population: int = 40, generations: int = 50,
               seed: int = 0, ranges=None, categorical=None, mutation_rate: float = 0.2,
               tournament: int = 3, init=None, sparse: bool = False) -> CfResult:
    """Elitist genetic search on the aggregated score.

    Tournament selection, uniform crossover and per-feature resampling
    mutation; the best individual always survives, so the per-generation
    best score never decreases.
    """
    if population < 2 or generations < 0 or tournament < 1 or not 0 <= mutation_rate <= 1:
        raise InputError("invalid genetic search parameters")
    x0 = np.asarray(x0, dtype=np.float64)
    lo, hi = _ranges(x0, ranges)
    rng = np.random.default_rng(seed)
    d = x0.shape[0]

    def mutate(P):
        hitmask = rng.random(P.shape) < mutation_rate
        return np.where(hitmask, lo + rng.random(P.shape) * (hi - lo), P)

    if init is None:
        pop = mutate(np.repeat(x0[None, :], population, axis=0))
        pop[0] = x0
    else:
        pop = np.asarray(init, dtype=np.float64).reshape(-1, d)
    _fix_categorical(pop, categorical)
    fit = target.score(models, pop)
    evaluations = pop.shape[0]
    best = int(np.argmax(fit))
    history = [float(fit[best])]

    for _ in range(generations):
        if history[-1] >= target.threshold:
            break
        contenders = rng.integers(0, pop.shape[0], size=(2, population, tournament))
        parents = [contenders[j][np.arange(population), np.argmax(fit[contenders[j]], axis=1)] for j in (0, 1)]
        cross = rng.random((population, d)) < 0.5
        children = mutate(np.where(cross, pop[parents[0]], pop[parents[1]]))
        _fix_categorical(children, categorical)
        child_fit = target.score(models, children)
        evaluations += population
        children[0], child_fit[0] = pop[best], fit[best]
        pop, fit = children, child_fit
        best = int(np.argmax(fit))
        history.append(float(fit[best]))

    winner = pop[best] if history[-1] >= target.threshold else None
    if winner is None:
        return CfResult(False, x0, pop[best].copy(), history[-1], evaluations, history)
    return _finish(models, target, x0, winner.copy(), evaluations, history, ranges, sparse)


# --- datasets, pairing and the patch-budget test ------------------------------


def load_dataset(path, label_col: str):
    """CSV with a header row; returns ``(X, y, feature_names)``."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    if label_col not in header:
        raise ParseError(f"{path}: label column {label_col!r} not in header")
    li = header.index(label_col)
    names = [h for j, h in enumerate(header) if j != li]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric cell ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ParseError(f"{path}: ragged rows")
    return np.delete(data, li, axis=1), data[:, li], names


def nn_pairing(X, y, baseline_class, target_class, count: int | None = None, seed: int = 0,
               epsilon: float = 0.05, categorical=None, names=None):
    """Pair sampled baseline-class rows with their nearest target-class row.

    Returns a list of ``(baseline_index, target_index, pair)``; ties in
    distance go to the lowest row index.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    base_idx = np.flatnonzero(y == baseline_class)
    targ_idx = np.flatnonzero(y == target_class)
    if base_idx.size == 0 or targ_idx.size == 0:
        raise InputError("baseline or target class has no rows")
    if count is not None and count < base_idx.size:
        rng = np.random.default_rng(seed)
        base_idx = np.sort(rng.choice(base_idx, size=count, replace=False))
    T = X[targ_idx]
    t_sq = np.einsum("ij,ij->i", T, T)
    out = []
    for i in base_idx:
        dist = t_sq - 2.0 * (T @ X[i]) + X[i] @ X[i]
        j = int(targ_idx[int(np.argmin(dist))])
        pair = CounterfactualPair(X[i], X[j], epsilon, categorical,
                                  tuple(names) if names is not None else None)
        out.append((int(i), j, pair))
    return out


@dataclass
class PatchCurve:
    ranking: tuple[int, ...]
    budgets: np.ndarray
    scores: np.ndarray
    k_at: dict[float, int | None]


def _patched(pair: CounterfactualPair, ranking: Sequence[int], budgets) -> np.ndarray:
    X = np.repeat(pair.x0[None, :], len(budgets), axis=0)
    for row, K in enumerate(budgets):
        idx = list(ranking[:K])
        X[row, idx] = pair.x1[idx]
    return X


def patch_budget_test(model, pair: CounterfactualPair, ranking: Sequence[int], budgets=None,
                      levels: Sequence[float] = (0.5, 0.9)) -> PatchCurve:
    """Score partial counterfactuals that apply only the top-K ranked changes."""
    ranking = tuple(int(i) for i in ranking)
    if sorted(ranking) != sorted(pair.changed):
        raise InputError("ranking must be a permutation of the changed features")
    k = len(ranking)
    budgets = np.arange(k + 1) if budgets is None else np.asarray(budgets, dtype=int)
    if np.any(budgets < 0) or np.any(budgets > k):
        raise InputError(f"budgets must lie in 0..{k}")
    scores = predict_batch(model, _patched(pair, ranking, budgets))
    k_at = {}
    for level in levels:
        hit = np.flatnonzero(scores >= level)
        k_at[float(level)] = int(budgets[hit[0]]) if hit.size else None
    return PatchCurve(ranking, budgets, scores, k_at)


def ranking_from_scores(features: Sequence[int], scores: Sequence[float]) -> tuple[int, ...]:
    """Features by descending score; ties keep feature order."""
    order = sorted(range(len(features)), key=lambda j: (-scores[j], j))
    return tuple(features[j] for j in order)


def random_ranking_band(model, pair: CounterfactualPair, seeds: int = 10, quantiles=(0.1, 0.9)):
    """Mean and quantile band of patch curves under random rankings."""
    curves = []
    for s in range(seeds):
        order = tuple(np.random.default_rng(s).permutation(pair.changed).tolist())
        curves.append(patch_budget_test(model, pair, order).scores)
    curves = np.array(curves)
    return curves.mean(axis=0), np.quantile(curves, quantiles[0], axis=0), np.quantile(curves, quantiles[1], axis=0)
