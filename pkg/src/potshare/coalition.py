"""The macro game on features: mixed inputs, coalition values and Harsanyi
dividends over the changed-feature support.

Coalitions are bitmasks over the ordered support (bit ``j`` stands for
feature ``support[j]``), which makes the subset-lattice transforms plain
in-place array passes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import CapacityError, InputError, ParseError
from .models import predict, predict_batch

EXHAUSTIVE_CAP = 12
DEFAULT_EPSILON = 1e-12


@dataclass(frozen=True, eq=False)
class CounterfactualPair:
    x0: np.ndarray
    x1: np.ndarray
    change_epsilon: float = DEFAULT_EPSILON
    categorical: np.ndarray | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=np.float64).ravel()
        x1 = np.asarray(self.x1, dtype=np.float64).ravel()
        if x0.shape != x1.shape:
            raise InputError(f"endpoints differ in length: {x0.shape[0]} vs {x1.shape[0]}")
        if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(x1))):
            raise InputError("endpoints must be finite")
        if self.change_epsilon < 0:
            raise InputError("change_epsilon must be non-negative")
        cat = np.zeros(x0.shape[0], bool) if self.categorical is None else np.asarray(self.categorical, bool)
        if cat.shape != x0.shape:
            raise InputError("categorical mask must have one flag per feature")
        if self.names is not None and len(self.names) != x0.shape[0]:
            raise InputError("need one name per feature")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "categorical", cat)

    @property
    def d(self) -> int:
        return self.x0.shape[0]

    @property
    def delta(self) -> np.ndarray:
        return self.x1 - self.x0

    @property
    def changed(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(np.abs(self.delta) > self.change_epsilon))

    def feature_names(self) -> tuple[str, ...]:
        return self.names if self.names is not None else tuple(f"x{i}" for i in range(self.d))

    def to_dict(self) -> dict:
        out = {"x0": self.x0.tolist(), "x1": self.x1.tolist()}
        if self.categorical.any():
            out["categorical"] = [int(i) for i in np.flatnonzero(self.categorical)]
        if self.names is not None:
            out["names"] = list(self.names)
        return out


def load_pair(path, change_epsilon: float = DEFAULT_EPSILON) -> CounterfactualPair:
    """Read a pair-spec JSON file ``{"x0": [...], "x1": [...]}``.

    Optional keys: ``categorical`` (feature indices), ``names``.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    for key in ("x0", "x1"):
        if key not in obj:
            raise ParseError(f"{path}: missing field '{key}'")
    d = len(obj["x0"])
    cat = np.zeros(d, bool)
    for i in obj.get("categorical", []):
        if not isinstance(i, int) or not 0 <= i < d:
            raise ParseError(f"{path}: categorical index {i!r} out of range")
        cat[i] = True
    names = tuple(obj["names"]) if "names" in obj else None
    try:
        return CounterfactualPair(obj["x0"], obj["x1"], change_epsilon, cat, names)
    except (InputError, ValueError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_pair(pair: CounterfactualPair, path) -> None:
    Path(path).write_text(json.dumps(pair.to_dict(), indent=2) + "\n")


def pair_from_rows(X: np.ndarray, i0: int, i1: int, **kwargs) -> CounterfactualPair:
    return CounterfactualPair(X[i0], X[i1], **kwargs)


def mixed_input(pair: CounterfactualPair, S: Iterable[int]) -> np.ndarray:
    """Instance taking counterfactual values on ``S`` and baseline elsewhere."""
    S = list(S)
    changed = set(pair.changed)
    stray = [i for i in S if i not in changed]
    if stray:
        raise InputError(f"coalition contains unchanged feature(s) {stray}")
    x = pair.x0.copy()
    x[S] = pair.x1[S]
    return x


def mask_to_features(mask: int, support: Sequence[int]) -> tuple[int, ...]:
    return tuple(f for j, f in enumerate(support) if mask >> j & 1)


def features_to_mask(S: Iterable[int], support: Sequence[int]) -> int:
    pos = {f: j for j, f in enumerate(support)}
    mask = 0
    for f in S:
        if f not in pos:
            raise InputError(f"feature {f} is not in the support {tuple(support)}")
        mask |= 1 << pos[f]
    return mask


def corner_matrix(pair: CounterfactualPair, support: Sequence[int]) -> np.ndarray:
    """All 2^k mixed inputs, row ``mask`` switching ``mask``'s features."""
    k = len(support)
    masks = np.arange(1 << k)
    X = np.repeat(pair.x0[None, :], 1 << k, axis=0)
    for j, f in enumerate(support):
        on = (masks >> j & 1).astype(bool)
        X[on, f] = pair.x1[f]
    return X


@dataclass(frozen=True, eq=False)
class ValueTable:
    support: tuple[int, ...]
    values: np.ndarray
    baseline_score: float

    @property
    def k(self) -> int:
        return len(self.support)

    @property
    def delta_y(self) -> float:
        return float(self.values[-1])

    def value(self, S: Iterable[int]) -> float:
        return float(self.values[features_to_mask(S, self.support)])


def coalition_values(model, pair: CounterfactualPair, cap: int = EXHAUSTIVE_CAP) -> ValueTable:
    support = pair.changed
    if len(support) > cap:
        raise CapacityError(
            f"{len(support)} changed features exceed the exhaustive cap of {cap}; "
            "use the Monte-Carlo estimators instead"
        )
    scores = predict_batch(model, corner_matrix(pair, support))
    values = scores - scores[0]
    values[0] = 0.0
    return ValueTable(support, values, float(scores[0]))


def value_table_from_array(values, support: Sequence[int] | None = None) -> ValueTable:
    """Wrap a raw length-2^k array (``values[0]`` must be 0) as a ValueTable."""
    values = np.asarray(values, dtype=np.float64).copy()
    k = int(values.shape[0]).bit_length() - 1
    if values.shape[0] != 1 << k:
        raise InputError("value array length must be a power of two")
    if values[0] != 0:
        raise InputError("V(empty) must be 0")
    support = tuple(range(k)) if support is None else tuple(support)
    return ValueTable(support, values, 0.0)


def mobius(values: np.ndarray) -> np.ndarray:
    """Fast Möbius transform on the subset lattice, O(k 2^k)."""
    a = np.array(values, dtype=np.float64)
    n = a.shape[0]
    k = n.bit_length() - 1
    for j in range(k):
        a = a.reshape(-1, 2, 1 << j)
        a[:, 1, :] -= a[:, 0, :]
    return a.reshape(n)


def zeta(dividends: np.ndarray) -> np.ndarray:
    """Inverse of :func:`mobius`: subset sums ``sum_{u <= S} phi_u``."""
    a = np.array(dividends, dtype=np.float64)
    n = a.shape[0]
    k = n.bit_length() - 1
    for j in range(k):
        a = a.reshape(-1, 2, 1 << j)
        a[:, 1, :] += a[:, 0, :]
    return a.reshape(n)


@dataclass(frozen=True, eq=False)
class DividendTable:
    support: tuple[int, ...]
    phi: np.ndarray  # indexed by bitmask; phi[0] == 0

    @property
    def k(self) -> int:
        return len(self.support)

    def pot(self, u: Iterable[int]) -> float:
        return float(self.phi[features_to_mask(u, self.support)])

    def pots(self, min_order: int = 1, max_order: int | None = None):
        """Yield ``(features, phi_u)`` in mask order for orders in range."""
        max_order = self.k if max_order is None else max_order
        for mask in range(1, 1 << self.k):
            order = mask.bit_count()
            if min_order <= order <= max_order:
                yield mask_to_features(mask, self.support), float(self.phi[mask])

    @property
    def total(self) -> float:
        return float(self.phi[1:].sum())


def dividends(vt: ValueTable) -> DividendTable:
    phi = mobius(vt.values)
    phi[0] = 0.0
    return DividendTable(vt.support, phi)


def reconstruct(dt: DividendTable, S: Iterable[int]) -> float:
    mask = features_to_mask(S, dt.support)
    total = 0.0
    sub = mask
    while sub:
        total += dt.phi[sub]
        sub = (sub - 1) & mask
    return float(total)


def single_value(model, pair: CounterfactualPair, S: Iterable[int]) -> float:
    """V(S) from two direct model calls (no batching)."""
    return predict(model, mixed_input(pair, S)) - predict(model, pair.x0)
