"""The TU micro-game on grid-step players and its LES allocations.

Each pot feature ``i`` is split into ``m_i`` interchangeable step players.  A
micro-coalition is worth the residual at the grid state that counts how many
steps of each feature it holds, so every allocation in the LES family can be
computed by summing over grid states instead of over the ``2^n``
micro-coalitions.  Full enumeration is kept as an oracle for small games.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .cube import GridSpec, ResidualGrid
from .exceptions import CapacityError, InputError

ENUMERATION_CAP = 22
PRESETS = ("shapley", "solidarity", "equal_surplus")


@dataclass(frozen=True, eq=False)
class LESWeights:
    """Scalar sequence ``b(0..n)`` with ``b(0) = 0`` and ``b(n) = 1``."""

    name: str
    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        if b.ndim != 1 or b.shape[0] < 2:
            raise InputError("weights need entries for s = 0..n with n >= 1")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise InputError("LES weights require b(0) = 0 and b(n) = 1")
        if not np.all(np.isfinite(b)):
            raise InputError("LES weights must be finite")
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.b.shape[0] - 1


def les_preset(name: str, n: int) -> LESWeights:
    if n < 1:
        raise InputError("player count must be >= 1")
    s = np.arange(n + 1, dtype=np.float64)
    if name == "shapley":
        b = np.ones(n + 1)
    elif name == "solidarity":
        b = 1.0 / (s + 1.0)
    elif name == "equal_surplus":
        b = np.zeros(n + 1)
        b[1] = n - 1
    else:
        raise InputError(f"unknown LES preset {name!r}; choose from {PRESETS}")
    b[0] = 0.0
    b[n] = 1.0
    return LESWeights(name, b)


@dataclass(frozen=True, eq=False)
class MicroGame:
    rg: ResidualGrid

    @property
    def grid(self) -> GridSpec:
        return self.rg.grid

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def players(self) -> list[tuple[int, int]]:
        """Micro-players ``(feature, step)``; bit ``a`` of a coalition is ``players[a]``."""
        return [(f, s) for f, mf in zip(self.grid.u, self.grid.m) for s in range(1, mf + 1)]

    def counts(self, A: int) -> tuple[int, ...]:
        out, offset = [], 0
        for mf in self.grid.m:
            out.append(((A >> offset) & ((1 << mf) - 1)).bit_count())
            offset += mf
        return tuple(out)


def micro_value(mg: MicroGame, A: int) -> float:
    if A < 0 or A >= 1 << mg.n:
        raise InputError("micro-coalition is not a subset of the player set")
    if A == 0:
        return 0.0
    return float(mg.rg.r[mg.counts(A)])


@dataclass
class PotShares:
    u: tuple[int, ...]
    rule: str
    shares: np.ndarray
    payoffs: np.ndarray | None = field(default=None, repr=False)

    @property
    def total(self) -> float:
        return float(self.shares.sum())

    def share(self, feature: int) -> float:
        return float(self.shares[self.u.index(feature)])


def _check_weights(mg: MicroGame, weights: LESWeights):
    if weights.n != mg.n:
        raise InputError(f"weights are for {weights.n} players, game has {mg.n}")


def _log_order_weights(n: int) -> np.ndarray:
    """``log(s! (n-s-1)! / n!)`` for ``s = 0..n-1``."""
    lg = math.lgamma
    return np.array([lg(s + 1) + lg(n - s) - lg(n + 1) for s in range(n)])


def enumerate_les(mg: MicroGame, weights: LESWeights) -> PotShares:
    """Exact LES payoffs by summing over every micro-coalition, O(n 2^n)."""
    n = mg.n
    if n > ENUMERATION_CAP:
        raise CapacityError(f"enumeration over {n} micro-players exceeds the cap of {ENUMERATION_CAP}")
    _check_weights(mg, weights)
    masks = np.arange(1 << n, dtype=np.int64)
    counts, offset = [], 0
    for mf in mg.grid.m:
        counts.append(np.bitwise_count((masks >> offset) & ((1 << mf) - 1)).astype(np.intp))
        offset += mf
    v = mg.rg.r[tuple(counts)]
    v[0] = 0.0
    size = np.bitwise_count(masks).astype(np.intp)
    del masks, counts
    w = np.append(np.exp(_log_order_weights(n)), 0.0)
    b = weights.b

    payoffs = np.empty(n)
    for a in range(n):
        hi = 1 << (n - a - 1)
        lo = 1 << a
        v_without = v.reshape(hi, 2, lo)[:, 0, :]
        v_with = v.reshape(hi, 2, lo)[:, 1, :]
        s = size.reshape(hi, 2, lo)[:, 0, :]
        payoffs[a] = np.sum(w[s] * (b[s + 1] * v_with - b[s] * v_without))

    shares, start = [], 0
    for mf in mg.grid.m:
        shares.append(payoffs[start : start + mf].sum())
        start += mf
    return PotShares(mg.grid.u, weights.name, np.array(shares), payoffs)


def grid_state_shares(mg: MicroGame, weights: LESWeights) -> np.ndarray:
    """Feature shares from the grid-state closed form for every pot feature.

    Loops over the ``prod (m_j + 1)`` states and ``k`` directions.  The
    permutation weight times the multiplicity ``prod_j C(m_j, p_j)`` is
    assembled in log space and exponentiated per state, so large ``n`` does
    not overflow.
    """
    _check_weights(mg, weights)
    grid = mg.grid
    if weights.name == "equal_surplus":
        return equal_surplus_shares(mg)
    k, m, n = grid.k, grid.m, grid.n
    lg = math.lgamma
    log_binom = [[lg(mj + 1) - lg(p + 1) - lg(mj - p + 1) for p in range(mj + 1)] for mj in m]
    log_w = _log_order_weights(n).tolist()
    b = weights.b.tolist()
    r = mg.rg.r.ravel().tolist()
    strides = [int(s) // 8 for s in np.empty(grid.shape).strides]
    exp = math.exp
    shares = [0.0] * k
    for flat, p in enumerate(itertools.product(*(range(mj + 1) for mj in m))):
        s = sum(p)
        if s == n:
            continue
        log_base = log_w[s]
        for j in range(k):
            log_base += log_binom[j][p[j]]
        rp = r[flat]
        b_s, b_next = b[s], b[s + 1]
        weight = None
        for j in range(k):
            steps_left = m[j] - p[j]
            if steps_left:
                inc = b_next * r[flat + strides[j]] - b_s * rp
                if inc != 0.0:
                    if weight is None:
                        weight = exp(log_base)
                    shares[j] += weight * steps_left * inc
    return np.array(shares)


def grid_state_les(mg: MicroGame, weights: LESWeights, feature: int) -> float:
    """Within-pot share ``S_{i -> u}`` of one feature by the closed form."""
    return float(grid_state_shares(mg, weights)[mg.grid.axis(feature)])


def equal_surplus_shares(mg: MicroGame) -> np.ndarray:
    """Equal Surplus on the micro-game in O(k).

    Each step player gets its singleton worth plus an equal part of the
    surplus ``v(N) - sum_b v({b})``; singletons of feature ``j`` are all worth
    ``r_{e_j}``.
    """
    grid = mg.grid
    n = grid.n
    zero = [0] * grid.k
    singles = []
    for j in range(grid.k):
        e = list(zero)
        e[j] = 1
        singles.append(float(mg.rg.r[tuple(e)]))
    surplus = mg.rg.phi - sum(mj * sj for mj, sj in zip(grid.m, singles))
    return np.array([mj * (sj + surplus / n) for mj, sj in zip(grid.m, singles)])


def les_shares(mg: MicroGame, rule: str) -> PotShares:
    weights = les_preset(rule, mg.n)
    return PotShares(mg.grid.u, rule, grid_state_shares(mg, weights))


def equal_split(phi: float, u) -> np.ndarray:
    u = tuple(u)
    if not u:
        raise InputError("cannot split a pot among zero features")
    return np.full(len(u), phi / len(u))
