"""Permutation-sampling Shapley estimators for changed sets too large to
enumerate.

Permutations are drawn in fixed-size blocks, each from its own Philox
stream keyed by ``(seed, block)``, so results do not depend on how blocks
are spread over workers.  Every permutation walks from the baseline to the
counterfactual and records one marginal per step; because the marginals of a
permutation are differences of consecutive values along one path, they
telescope to the grand value.
"""
from __future__ import annotations

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .coalition import CounterfactualPair
from .exceptions import CapacityError, InputError
from .models import predict_batch

BLOCK = 64
MIXTURE_CAP = 12


@dataclass(frozen=True)
class McConfig:
    permutations: int = 1000
    seed: int = 0
    antithetic: bool = False
    batch_size: int = 65536
    threads: int = 1

    def __post_init__(self):
        if self.permutations < 1:
            raise InputError("need at least one permutation")
        if self.batch_size < 1 or self.threads < 1:
            raise InputError("batch_size and threads must be positive")


@dataclass
class McEstimate:
    features: tuple[int, ...]
    mean: np.ndarray
    stderr: np.ndarray
    permutations: int
    seed: int
    delta_y: float

    def to_csv(self, path, names=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "estimate", "stderr"])
            for f, mu, se in zip(self.features, self.mean, self.stderr):
                w.writerow([names[f] if names else f, f"{mu:.12g}", f"{se:.12g}"])


def _block_orders(seed: int, block: int, count: int, players: int, antithetic: bool) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), block]))
    draws = count // 2 if antithetic else count
    orders = np.argsort(rng.random((draws, players)), axis=1)
    if antithetic:
        orders = np.concatenate([orders, orders[:, ::-1]])
    return orders


def _mixture_eval(model, pair: CounterfactualPair, support: tuple[int, ...], T: np.ndarray,
                  batch_size: int) -> np.ndarray:
    """Model at slider states ``T`` over the full support, categorical
    coordinates blended between their endpoints."""
    X = np.repeat(pair.x0[None, :], T.shape[0], axis=0)
    idx = list(support)
    X[:, idx] = pair.x0[idx] + T * pair.delta[idx]
    cat = [j for j, f in enumerate(support) if pair.categorical[f]]

    def run(Xb):
        return np.concatenate([predict_batch(model, Xb[s:s + batch_size])
                               for s in range(0, Xb.shape[0], batch_size)])

    if not cat:
        return run(X)
    frac = [j for j in cat if np.any((T[:, j] > 0) & (T[:, j] < 1))]
    if len(frac) > MIXTURE_CAP:
        raise CapacityError(f"{len(frac)} fractional categorical coordinates exceed the mixture cap")
    for j in cat:
        if j not in frac:
            X[:, support[j]] = np.where(T[:, j] >= 1, pair.x1[support[j]], pair.x0[support[j]])
    out = np.zeros(T.shape[0])
    for bits in itertools.product((0, 1), repeat=len(frac)):
        w = np.ones(T.shape[0])
        Xe = X.copy()
        for j, bit in zip(frac, bits):
            f = support[j]
            w = w * (T[:, j] if bit else 1.0 - T[:, j])
            Xe[:, f] = pair.x1[f] if bit else pair.x0[f]
        live = w != 0
        if live.any():
            out[live] += w[live] * run(Xe[live])
    return out


def _walk_block(model, pair, support, m, orders, batch_size):
    """Per-permutation feature totals for one block of step orders."""
    k = len(support)
    P, n = orders.shape
    owner = np.repeat(np.arange(k), m)[orders]  # feature moved at each step
    chunk = max(1, batch_size // (n + 1))
    totals = np.zeros((P, k))
    grand = np.empty(P)
    for start in range(0, P, chunk):
        own = owner[start:start + chunk]
        c = own.shape[0]
        steps = np.zeros((c, n + 1, k))
        steps[np.arange(c)[:, None], np.arange(1, n + 1)[None, :], own] = 1.0
        T = (np.cumsum(steps, axis=1) / m).reshape(-1, k)
        values = _mixture_eval(model, pair, support, T, batch_size).reshape(c, n + 1)
        marg = np.diff(values, axis=1)
        for r in range(c):
            totals[start + r] = np.bincount(own[r], weights=marg[r], minlength=k)
        grand[start:start + c] = values[:, -1] - values[:, 0]
    return totals, grand


def _estimate(model, pair: CounterfactualPair, m: int, cfg: McConfig) -> McEstimate:
    support = pair.changed
    if not support:
        raise InputError("the pair has no changed features")
    k = len(support)
    n = k * m
    per_block = BLOCK * (2 if cfg.antithetic else 1)
    blocks = []
    left = cfg.permutations
    b = 0
    while left > 0:
        take = min(per_block, left)
        if cfg.antithetic and take % 2:
            take += 1  # keep reversal pairs whole
        blocks.append((b, take))
        left -= take
        b += 1

    def job(spec):
        block, count = spec
        orders = _block_orders(cfg.seed, block, count, n, cfg.antithetic)
        totals, grand = _walk_block(model, pair, support, m, orders, cfg.batch_size)
        if cfg.antithetic:
            # a permutation and its reversal are dependent; average them into one sample
            half = count // 2
            totals = 0.5 * (totals[:half] + totals[half:])
        return totals, grand

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(job, blocks))
    else:
        results = [job(s) for s in blocks]
    samples = np.concatenate([r[0] for r in results])
    P = sum(count for _, count in blocks)
    mean = samples.mean(axis=0)
    if samples.shape[0] > 1:
        stderr = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    else:
        stderr = np.zeros(k)
    grand = float(np.mean(np.concatenate([r[1] for r in results])))
    return McEstimate(support, mean, stderr, P, cfg.seed, grand)


def mc_macro_shapley(model, pair: CounterfactualPair, cfg: McConfig = McConfig()) -> McEstimate:
    """Feature Shapley values of the mixed-input game by permutation sampling."""
    return _estimate(model, pair, 1, cfg)


def mc_micro_shapley(model, pair: CounterfactualPair, m: int, cfg: McConfig = McConfig()) -> McEstimate:
    """Micro-game Shapley over all changed features, ``m`` steps each.

    The game value of a micro-coalition is the model at its grid state minus
    the baseline score; feature estimates aggregate their steps' marginals.
    """
    if m < 1:
        raise InputError("m must be >= 1")
    return _estimate(model, pair, int(m), cfg)
