"""Local-cube restriction of a model to one pot: slider points, grid tables,
the residual interaction surface and its one-step increments.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coalition import CounterfactualPair
from .exceptions import EvaluationError, InputError
from .models import predict_batch


def _normalise_pot(pair: CounterfactualPair, u: Sequence[int]) -> tuple[int, ...]:
    u = tuple(sorted(int(i) for i in u))
    if len(set(u)) != len(u):
        raise InputError(f"pot {u} repeats a feature")
    if any(i < 0 or i >= pair.d for i in u):
        raise InputError(f"pot {u} references features outside 0..{pair.d - 1}")
    return u


def _normalise_m(m, k: int) -> tuple[int, ...]:
    m = (int(m),) * k if np.isscalar(m) else tuple(int(v) for v in m)
    if len(m) != k:
        raise InputError(f"need {k} resolutions, got {len(m)}")
    if any(v < 1 for v in m):
        raise InputError("every resolution must be >= 1")
    return m


def slider_point(pair: CounterfactualPair, u: Sequence[int], t) -> np.ndarray:
    """``x0 + sum_i t_i * delta_i * e_i`` over the pot features."""
    u = _normalise_pot(pair, u)
    t = np.asarray(t, dtype=np.float64).ravel()
    if t.shape[0] != len(u):
        raise InputError(f"slider vector has length {t.shape[0]}, pot has {len(u)} features")
    if np.any(t < 0) or np.any(t > 1):
        raise InputError("slider coordinates must lie in [0, 1]")
    x = pair.x0.copy()
    idx = list(u)
    x[idx] = pair.x0[idx] + t * pair.delta[idx]
    return x


def cube_values(model, pair: CounterfactualPair, u: Sequence[int], T: np.ndarray) -> np.ndarray:
    """Evaluate the cube-restricted model at slider points ``T`` (rows).

    Categorical pot coordinates use the endpoint mixture: the model is only
    ever queried with those coordinates pinned at baseline or counterfactual,
    and the results are blended with weights ``(1 - t_i, t_i)`` per
    coordinate (tensor product across several categorical coordinates).
    Zero-weight terms are skipped, so corner states reproduce raw
    evaluations exactly.
    """
    u = tuple(u)
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    idx = list(u)
    X = np.repeat(pair.x0[None, :], T.shape[0], axis=0)
    X[:, idx] = pair.x0[idx] + T * pair.delta[idx]
    cat = [j for j, f in enumerate(u) if pair.categorical[f]]
    if not cat:
        return predict_batch(model, X)

    out = np.zeros(T.shape[0])
    for bits in itertools.product((0, 1), repeat=len(cat)):
        w = np.ones(T.shape[0])
        Xe = X.copy()
        for j, bit in zip(cat, bits):
            f = u[j]
            w = w * (T[:, j] if bit else 1.0 - T[:, j])
            Xe[:, f] = pair.x1[f] if bit else pair.x0[f]
        live = w != 0
        if live.any():
            out[live] += w[live] * predict_batch(model, Xe[live])
    return out


@dataclass(frozen=True, eq=False)
class GridSpec:
    u: tuple[int, ...]
    m: tuple[int, ...]

    def __post_init__(self):
        if len(self.u) < 2:
            raise InputError("a pot grid needs at least 2 features")
        if len(self.m) != len(self.u) or any(v < 1 for v in self.m):
            raise InputError("need one resolution >= 1 per pot feature")

    @classmethod
    def make(cls, u: Sequence[int], m) -> "GridSpec":
        u = tuple(sorted(int(i) for i in u))
        return cls(u, _normalise_m(m, len(u)))

    @property
    def k(self) -> int:
        return len(self.u)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(v + 1 for v in self.m)

    @property
    def n(self) -> int:
        return sum(self.m)

    def states(self) -> np.ndarray:
        """All grid states as rows, in row-major order."""
        return np.indices(self.shape).reshape(self.k, -1).T

    def slider(self, p) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) / np.asarray(self.m, dtype=np.float64)

    def axis(self, feature: int) -> int:
        try:
            return self.u.index(feature)
        except ValueError:
            raise InputError(f"feature {feature} is not in pot {self.u}") from None


@dataclass(frozen=True, eq=False)
class CubeTable:
    grid: GridSpec
    values: np.ndarray  # shape grid.shape


@dataclass(frozen=True, eq=False)
class ResidualGrid:
    grid: GridSpec
    r: np.ndarray  # shape grid.shape

    @property
    def phi(self) -> float:
        return float(self.r[tuple(self.grid.m)])

    @classmethod
    def from_array(cls, r, u: Sequence[int] | None = None) -> "ResidualGrid":
        r = np.asarray(r, dtype=np.float64)
        u = tuple(range(r.ndim)) if u is None else tuple(u)
        return cls(GridSpec(u, tuple(s - 1 for s in r.shape)), r)


def eval_cube(model, pair: CounterfactualPair, grid: GridSpec) -> CubeTable:
    _normalise_pot(pair, grid.u)
    states = grid.states()
    try:
        g = cube_values(model, pair, grid.u, states / np.asarray(grid.m, dtype=np.float64))
    except EvaluationError as exc:
        raise EvaluationError(f"pot {grid.u}: {exc} (state {_state_hint(exc, states)})") from exc
    return CubeTable(grid, g.reshape(grid.shape))


def _state_hint(exc: Exception, states: np.ndarray) -> str:
    msg = str(exc)
    if "row " in msg:
        try:
            row = int(msg.rsplit("row ", 1)[1].split()[0])
            return str(tuple(int(v) for v in states[row]))
        except (ValueError, IndexError):
            pass
    return "unknown"


def residual_grid(ct: CubeTable) -> ResidualGrid:
    """Inclusion-exclusion over masked faces as k axis-differencing passes.

    ``prod_i (I - pin_i)`` with ``pin_i`` setting axis ``i`` to 0 expands to
    the signed sum over all masked indices, so each pass subtracts the
    axis-0 slice.  After its pass an axis' zero slice is exactly 0.0 and
    stays so, which makes the boundary property exact.
    """
    r = np.array(ct.values, dtype=np.float64)
    for ax in range(r.ndim):
        r = r - np.take(r, [0], axis=ax)
    return ResidualGrid(ct.grid, r)


def residual_at(model, pair: CounterfactualPair, u: Sequence[int], T: np.ndarray) -> np.ndarray:
    """Residual interaction at arbitrary slider points by literal masking."""
    u = tuple(u)
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    k = len(u)
    masks = list(itertools.product((0, 1), repeat=k))
    stacked = np.concatenate([T * np.asarray(mk, dtype=np.float64) for mk in masks])
    g = cube_values(model, pair, u, stacked).reshape(len(masks), T.shape[0])
    signs = np.array([(-1.0) ** (k - sum(mk)) for mk in masks])
    return signs @ g


def delta_p(rg: ResidualGrid, p, feature: int, b: np.ndarray | None = None) -> float:
    """Weighted one-step increment ``b(|p|+1) r_{p+e_i} - b(|p|) r_p``.

    ``b=None`` means Shapley weights, for which the increment is the plain
    difference of residuals.
    """
    p = tuple(int(v) for v in p)
    ax = rg.grid.axis(feature)
    if len(p) != rg.grid.k or any(v < 0 or v > mv for v, mv in zip(p, rg.grid.m)):
        raise InputError(f"state {p} is outside the grid")
    if p[ax] >= rg.grid.m[ax]:
        raise IndexError(f"feature {feature} is already at its last step in state {p}")
    q = list(p)
    q[ax] += 1
    q = tuple(q)
    if b is None:
        return float(rg.r[q] - rg.r[p])
    s = sum(p)
    return float(b[s + 1] * rg.r[q] - b[s] * rg.r[p])


def dump_grid_csv(ct: CubeTable, rg: ResidualGrid, path) -> None:
    grid = ct.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"p_{f}" for f in grid.u] + [f"t_{f}" for f in grid.u] + ["g", "r"])
        for p in grid.states():
            key = tuple(p)
            t = grid.slider(p)
            w.writerow(
                [int(v) for v in p] + [f"{v:.12g}" for v in t]
                + [f"{ct.values[key]:.12g}", f"{rg.r[key]:.12g}"]
            )
