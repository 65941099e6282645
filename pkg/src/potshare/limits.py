"""Infinite-resolution reference values and resolution selection.

The diagonal path integral of the residual's partial derivatives is the
limit of micro-Shapley shares as every resolution grows; it is computed here
by finite differences and trapezoid quadrature so it can serve as a
reference for convergence checks on black-box models.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coalition import CounterfactualPair, coalition_values, dividends
from .cube import GridSpec, eval_cube, residual_at, residual_grid
from .exceptions import InputError
from .microgame import MicroGame, grid_state_shares, les_preset
from .models import ThresholdModel

DEFAULT_SCHEDULE = (1, 2, 3, 4, 5, 6, 8, 10, 12, 15)


@dataclass
class DiagonalIGResult:
    u: tuple[int, ...]
    integrals: np.ndarray
    nodes: int
    fd_step: float
    non_smooth: bool = False

    @property
    def total(self) -> float:
        return float(self.integrals.sum())


def diagonal_ig(model, pair: CounterfactualPair, u: Sequence[int], nodes: int = 257,
                fd_step: float = 1e-4) -> DiagonalIGResult:
    u = tuple(sorted(u))
    k = len(u)
    if nodes < 2:
        raise InputError("quadrature needs at least 2 nodes")
    if not 0 < fd_step < 0.5:
        raise InputError("finite-difference step must lie in (0, 0.5)")
    tau = np.linspace(0.0, 1.0, nodes)
    base = np.repeat(tau[:, None], k, axis=1)

    points, spans = [], []
    for j in range(k):
        hi = base.copy()
        lo = base.copy()
        hi[:, j] = np.minimum(tau + fd_step, 1.0)
        lo[:, j] = np.maximum(tau - fd_step, 0.0)
        points += [hi, lo]
        spans.append(hi[:, j] - lo[:, j])
    r = residual_at(model, pair, u, np.concatenate(points)).reshape(2 * k, nodes)

    integrals = np.empty(k)
    for j in range(k):
        grad = (r[2 * j] - r[2 * j + 1]) / spans[j]
        integrals[j] = np.trapezoid(grad, tau)
    return DiagonalIGResult(u, integrals, nodes, fd_step, isinstance(model, ThresholdModel))


def pot_shapley_shares(model, pair: CounterfactualPair, u: Sequence[int], m) -> np.ndarray:
    grid = GridSpec.make(u, m)
    rg = residual_grid(eval_cube(model, pair, grid))
    mg = MicroGame(rg)
    return grid_state_shares(mg, les_preset("shapley", mg.n))


@dataclass
class ConvergenceTrace:
    u: tuple[int, ...]
    reference: DiagonalIGResult
    m: list[int] = field(default_factory=list)
    shares: list[np.ndarray] = field(default_factory=list)

    @property
    def gaps(self) -> np.ndarray:
        return np.abs(np.array(self.shares) - self.reference.integrals[None, :])

    def rows(self):
        for m, sh, gap in zip(self.m, self.shares, self.gaps):
            for f, s, g in zip(self.u, sh, gap):
                yield m, f, float(s), float(g)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "feature", "share", "gap"])
            for m, f, s, g in self.rows():
                w.writerow([m, f, f"{s:.12g}", f"{g:.12g}"])


def convergence_curve(model, pair: CounterfactualPair, u: Sequence[int], m_schedule: Sequence[int],
                      nodes: int = 257, fd_step: float = 1e-4) -> ConvergenceTrace:
    u = tuple(sorted(u))
    schedule = list(m_schedule)
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise InputError("m schedule must be strictly increasing")
    trace = ConvergenceTrace(u, diagonal_ig(model, pair, u, nodes, fd_step))
    for m in schedule:
        trace.m.append(int(m))
        trace.shares.append(pot_shapley_shares(model, pair, u, m))
    return trace


@dataclass(frozen=True)
class SaturationPolicy:
    epsilon: float = 0.001
    consecutive: int = 3
    schedule: tuple[int, ...] = DEFAULT_SCHEDULE
    relative: bool = True  # shares as fractions of the total change

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InputError("saturation tolerance must be positive")
        if self.consecutive < 1:
            raise InputError("need at least one stable refinement")
        if not self.schedule or any(b <= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise InputError("refinement schedule must be non-empty and strictly increasing")
        if self.schedule[0] < 1:
            raise InputError("resolutions must be >= 1")


@dataclass
class SaturationResult:
    m: int
    saturated: bool
    schedule: list[int]
    shares: list[np.ndarray]
    changes: list[float]


def local_shapley_shares(model, pair: CounterfactualPair, m, max_order: int | None = None) -> np.ndarray:
    """Per-feature locals (singleton pot plus micro-Shapley shares), over all d features."""
    dt = dividends(coalition_values(model, pair))
    out = np.zeros(pair.d)
    for u, phi in dt.pots(1, max_order):
        if len(u) == 1:
            out[u[0]] += phi
        else:
            out[list(u)] += pot_shapley_shares(model, pair, u, m)
    return out


def saturate_m(model, pair: CounterfactualPair, policy: SaturationPolicy = SaturationPolicy(),
               max_order: int | None = None) -> SaturationResult:
    """Refine uniform m until shares are stable for ``consecutive`` steps.

    Returns the first resolution of the stable run: every later refinement
    in the run moved no share by more than ``epsilon``.
    """
    scale = 1.0
    if policy.relative:
        vt = coalition_values(model, pair)
        scale = abs(vt.delta_y) or 1.0
    shares, changes, schedule = [], [], []
    run = 0
    for m in policy.schedule:
        sh = local_shapley_shares(model, pair, m, max_order) / scale
        if shares:
            changes.append(float(np.max(np.abs(sh - shares[-1]), initial=0.0)))
            run = run + 1 if changes[-1] < policy.epsilon else 0
        shares.append(sh)
        schedule.append(m)
        if run >= policy.consecutive:
            return SaturationResult(schedule[-1 - run], True, schedule, shares, changes)
    return SaturationResult(schedule[-1], False, schedule, shares, changes)
