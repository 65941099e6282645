"""Local and global attribution reports.

``explain_local`` runs the whole pipeline for one baseline/counterfactual
pair: coalition values, dividends, one residual grid per interaction pot,
within-pot allocation under each requested rule, and per-feature locals
(singleton dividend plus every within-pot share of the feature).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import kendalltau

from .coalition import EXHAUSTIVE_CAP, CounterfactualPair, coalition_values, dividends
from .cube import GridSpec, eval_cube, residual_grid
from .exceptions import CapacityError, InputError
from .limits import SaturationPolicy, saturate_m
from .microgame import MicroGame, equal_split, grid_state_shares, les_preset
from .montecarlo import McConfig, mc_micro_shapley

RULES = ("equal_split", "micro_shapley", "solidarity", "equal_surplus")
ALIASES = {
    "equal": "equal_split", "eq": "equal_split", "equal_split": "equal_split",
    "shapley": "micro_shapley", "micro": "micro_shapley", "micro_shapley": "micro_shapley",
    "solidarity": "solidarity",
    "es": "equal_surplus", "equal_surplus": "equal_surplus",
}
_LES_NAME = {"micro_shapley": "shapley", "solidarity": "solidarity", "equal_surplus": "equal_surplus"}
LABELS = {"equal_split": "phi_eq", "micro_shapley": "S_micro", "solidarity": "S_solidarity", "equal_surplus": "ES"}


def parse_rules(rules) -> tuple[str, ...]:
    if isinstance(rules, str):
        rules = [r for r in rules.split(",") if r.strip()]
    out = []
    for r in rules:
        key = ALIASES.get(r.strip().lower())
        if key is None:
            raise InputError(f"unknown rule {r!r}; choose from {sorted(ALIASES)}")
        if key not in out:
            out.append(key)
    if not out:
        raise InputError("select at least one rule")
    return tuple(sorted(out, key=RULES.index))


def _fmt(v: float) -> float:
    return float(f"{v:.12g}")


@dataclass
class ExplainConfig:
    """Pipeline settings.

    ``m`` is a uniform resolution or one resolution per feature (length d).
    ``es_mode`` picks how Equal Surplus is applied: ``"macro"`` divides the
    total change on the feature game (a feature-total baseline with no
    within-pot rows), ``"pot"`` runs the Equal Surplus LES rule inside every
    pot's micro-game.
    """

    m: int | Sequence[int] = 5
    rules: Sequence[str] = ("equal_split", "micro_shapley", "equal_surplus")
    order_cap: int | None = None
    es_mode: str = "macro"
    saturate: SaturationPolicy | None = None
    use_mc: bool = False
    mc: McConfig = field(default_factory=McConfig)
    exhaustive_cap: int = EXHAUSTIVE_CAP
    dense: bool = False

    def __post_init__(self):
        self.rules = parse_rules(self.rules)
        if self.es_mode not in ("macro", "pot"):
            raise InputError("es_mode must be 'macro' or 'pot'")
        if np.isscalar(self.m):
            if int(self.m) < 1:
                raise InputError("m must be >= 1")
            self.m = int(self.m)
        else:
            self.m = tuple(int(v) for v in self.m)
            if any(v < 1 for v in self.m):
                raise InputError("every resolution must be >= 1")
        if self.order_cap is not None and self.order_cap < 1:
            raise InputError("order_cap must be >= 1")

    def resolution(self, u: Sequence[int]):
        if isinstance(self.m, int):
            return self.m
        return tuple(self.m[i] for i in u)


@dataclass
class PotRecord:
    u: tuple[int, ...]
    phi: float
    shares: dict[str, np.ndarray]
    m: tuple[int, ...] | None = None

    def rows(self):
        eq = self.shares.get("equal_split", equal_split(self.phi, self.u))
        for rule, sh in self.shares.items():
            for f, s, e in zip(self.u, sh, eq):
                yield rule, f, float(s), float(s - e)


@dataclass
class AttributionReport:
    delta_y: float
    baseline_score: float
    names: tuple[str, ...]
    support: tuple[int, ...]
    rules: tuple[str, ...]
    locals: dict[str, np.ndarray]
    pots: list[PotRecord]
    efficiency: dict[str, float]
    kendall: dict[str, float]
    mode: str = "exhaustive"
    m: int | tuple[int, ...] | None = None
    stderr: dict[str, np.ndarray] | None = None
    dense: bool = False

    @property
    def d(self) -> int:
        return len(self.names)

    def rows(self) -> list[int]:
        if self.dense:
            return list(range(self.d))
        keep = []
        for f in self.support:
            if any(self.locals[r][f] != 0.0 for r in self.rules) or any(f in p.u for p in self.pots if p.phi != 0.0):
                keep.append(f)
        return keep

    def pot(self, u: Sequence[int]) -> PotRecord:
        u = tuple(sorted(u))
        for p in self.pots:
            if p.u == u:
                return p
        raise InputError(f"pot {u} is not in the report")

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "delta_y": _fmt(self.delta_y),
            "baseline_score": _fmt(self.baseline_score),
            "m": list(self.m) if isinstance(self.m, tuple) else self.m,
            "support": list(self.support),
            "rules": list(self.rules),
            "locals": {
                r: {self.names[f]: _fmt(self.locals[r][f]) for f in self.rows()} for r in self.rules
            },
            "efficiency_residual": {r: _fmt(v) for r, v in self.efficiency.items()},
            "kendall_tau": {k: (None if np.isnan(v) else _fmt(v)) for k, v in self.kendall.items()},
            "pots": [
                {
                    "pot": [self.names[f] for f in p.u],
                    "phi": _fmt(p.phi),
                    "shares": {r: [_fmt(v) for v in sh] for r, sh in p.shares.items()},
                }
                for p in self.pots
            ],
        }
        if self.stderr is not None:
            out["stderr"] = {r: {self.names[f]: _fmt(v[f]) for f in self.support} for r, v in self.stderr.items()}
        return out

    def write(self, out_dir, fmt: str = "csv") -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        if fmt in ("json", "all"):
            p = out_dir / "report.json"
            p.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
            written.append(p)
        if fmt in ("csv", "all"):
            p = out_dir / "locals.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["feature"] + list(self.rules) + [f"{r}_pct" for r in self.rules])
                for f in self.rows():
                    vals = [self.locals[r][f] for r in self.rules]
                    w.writerow([self.names[f]] + [f"{v:.12g}" for v in vals]
                               + [f"{_pct(v, self.delta_y):.12g}" for v in vals])
            written.append(p)
            p = out_dir / "pots.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["order", "pot", "phi", "rule", "feature", "share", "minus_equal_split"])
                for pot in self.pots:
                    label = "+".join(self.names[f] for f in pot.u)
                    for rule, f, s, diff in pot.rows():
                        w.writerow([len(pot.u), label, f"{pot.phi:.12g}", rule, self.names[f],
                                    f"{s:.12g}", f"{diff:.12g}"])
            written.append(p)
        if fmt in ("table", "all"):
            p = out_dir / "report.txt"
            p.write_text(render_table(self) + "\n")
            written.append(p)
        if not written:
            raise InputError(f"unknown output format {fmt!r}")
        return written


def _pct(v: float, total: float) -> float:
    return 100.0 * v / total if total != 0 else float("nan")


def render_table(report: AttributionReport) -> str:
    """Aligned text table: one column per rule, then the micro-game rule's
    differences to every other rule as a percentage of the total change."""
    rules = list(report.rules)
    diffs = [r for r in rules if r != "micro_shapley"] if "micro_shapley" in rules else []
    head = ["Feature"] + [LABELS[r] for r in rules] + [f"S_micro-{LABELS[r]}" for r in diffs]
    body = []
    for f in sorted(report.rows(), key=lambda f: -report.locals[rules[0] if not diffs else "micro_shapley"][f]):
        row = [report.names[f]] + [f"{report.locals[r][f]:.4f}" for r in rules]
        row += [f"{_pct(report.locals['micro_shapley'][f] - report.locals[r][f], report.delta_y):+.2f}%" for r in diffs]
        body.append(row)
    total = ["Total"] + [f"{sum(report.locals[r][f] for f in report.rows()):.4f}" for r in rules] + [""] * len(diffs)
    widths = [max(len(row[j]) for row in [head, total] + body) for j in range(len(head))]
    line = lambda row: "  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(row, widths)))
    out = [f"Delta y = {report.delta_y:.4f}", line(head), "-" * len(line(head))]
    out += [line(r) for r in body] + ["-" * len(line(head)), line(total)]
    return "\n".join(out)


def within_pot_table(report: AttributionReport, u: Sequence[int]):
    """Rows ``(rule, feature, share, share - equal split)`` for one pot."""
    return list(report.pot(u).rows())


def _kendall(report_locals: dict[str, np.ndarray], support: Sequence[int]) -> dict[str, float]:
    out = {}
    rules = list(report_locals)
    for a in range(len(rules)):
        for b in range(a + 1, len(rules)):
            x = report_locals[rules[a]][list(support)]
            y = report_locals[rules[b]][list(support)]
            if len(support) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
                tau = float("nan")
            else:
                tau = float(kendalltau(x, y).statistic)
            out[f"{rules[a]}~{rules[b]}"] = tau
    return out


def _mc_report(model, pair: CounterfactualPair, cfg: ExplainConfig, names) -> AttributionReport:
    if not isinstance(cfg.m, int):
        raise InputError("Monte-Carlo mode needs a uniform resolution m")
    est = mc_micro_shapley(model, pair, cfg.m, cfg.mc)
    loc = np.zeros(pair.d)
    se = np.zeros(pair.d)
    loc[list(est.features)] = est.mean
    se[list(est.features)] = est.stderr
    locals_ = {"micro_shapley": loc}
    return AttributionReport(
        est.delta_y, float("nan"), names, est.features, ("micro_shapley",), locals_, [],
        {"micro_shapley": float(loc.sum() - est.delta_y)}, {}, "mc", cfg.m,
        {"micro_shapley": se}, cfg.dense,
    )


def explain_local(model, pair: CounterfactualPair, cfg: ExplainConfig | None = None) -> AttributionReport:
    cfg = cfg or ExplainConfig()
    names = pair.feature_names()
    k = len(pair.changed)
    if k > cfg.exhaustive_cap:
        if cfg.use_mc:
            return _mc_report(model, pair, cfg, names)
        raise CapacityError(
            f"{k} changed features exceed the exhaustive cap of {cfg.exhaustive_cap}; enable Monte-Carlo mode"
        )
    if cfg.use_mc:
        return _mc_report(model, pair, cfg, names)

    if cfg.saturate is not None:
        cfg = ExplainConfig(**{**cfg.__dict__, "saturate": None,
                               "m": saturate_m(model, pair, cfg.saturate, cfg.order_cap).m})

    vt = coalition_values(model, pair, cfg.exhaustive_cap)
    dt = dividends(vt)
    rules = cfg.rules
    pot_rules = [r for r in rules if r in ("micro_shapley", "solidarity")
                 or (r == "equal_surplus" and cfg.es_mode == "pot")]
    locals_ = {r: np.zeros(pair.d) for r in rules}
    singles = {}
    pots = []
    for u, phi in dt.pots(1, cfg.order_cap):
        if len(u) == 1:
            singles[u[0]] = phi
            for r in rules:
                locals_[r][u[0]] += phi
            continue
        shares = {}
        if "equal_split" in rules:
            shares["equal_split"] = equal_split(phi, u)
        m_u = None
        if pot_rules:
            grid = GridSpec.make(u, cfg.resolution(u))
            mg = MicroGame(residual_grid(eval_cube(model, pair, grid)))
            m_u = grid.m
            for r in pot_rules:
                shares[r] = grid_state_shares(mg, les_preset(_LES_NAME[r], mg.n))
        for r, sh in shares.items():
            locals_[r][list(u)] += sh
        pots.append(PotRecord(u, phi, shares, m_u))

    if "equal_surplus" in rules and cfg.es_mode == "macro":
        surplus = vt.delta_y - sum(singles.values())
        es = np.zeros(pair.d)
        for f in vt.support:
            es[f] = singles.get(f, 0.0) + surplus / k
        locals_["equal_surplus"] = es

    efficiency = {r: float(locals_[r].sum() - vt.delta_y) for r in rules}
    return AttributionReport(
        vt.delta_y, vt.baseline_score, names, vt.support, rules, locals_, pots, efficiency,
        _kendall(locals_, vt.support), "exhaustive", cfg.m, None, cfg.dense,
    )


@dataclass
class GlobalReport:
    names: tuple[str, ...]
    rules: tuple[str, ...]
    averages: dict[str, np.ndarray]
    pair_count: int
    mean_k: float
    mean_delta_y: float

    def to_dict(self) -> dict:
        return {
            "pair_count": self.pair_count,
            "mean_changed": _fmt(self.mean_k),
            "mean_delta_y": _fmt(self.mean_delta_y),
            "rules": list(self.rules),
            "averages": {r: {n: _fmt(v) for n, v in zip(self.names, self.averages[r])} for r in self.rules},
        }

    def write(self, out_dir, fmt: str = "csv") -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        if fmt in ("json", "all"):
            p = out_dir / "global.json"
            p.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
            written.append(p)
        if fmt in ("csv", "all"):
            p = out_dir / "global.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["feature"] + list(self.rules))
                for j, n in enumerate(self.names):
                    w.writerow([n] + [f"{self.averages[r][j]:.12g}" for r in self.rules])
            written.append(p)
        if fmt in ("table", "all"):
            p = out_dir / "global.txt"
            head = ["Feature"] + [LABELS[r] for r in self.rules]
            rows = [[n] + [f"{self.averages[r][j]:.4f}" for r in self.rules] for j, n in enumerate(self.names)]
            widths = [max(len(r[c]) for r in [head] + rows) for c in range(len(head))]
            lines = [f"pairs = {self.pair_count}, mean changed = {self.mean_k:.2f}, mean Delta y = {self.mean_delta_y:.4f}"]
            lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [head] + rows]
            p.write_text("\n".join(lines) + "\n")
            written.append(p)
        if not written:
            raise InputError(f"unknown output format {fmt!r}")
        return written


def aggregate(reports: Sequence[AttributionReport]) -> GlobalReport:
    if not reports:
        raise InputError("need at least one report")
    rules = reports[0].rules
    names = reports[0].names
    if any(r.rules != rules or r.d != len(names) for r in reports):
        raise InputError("reports disagree on rules or feature count")
    avg = {r: np.mean([rep.locals[r] for rep in reports], axis=0) for r in rules}
    return GlobalReport(
        names, rules, avg, len(reports),
        float(np.mean([len(rep.support) for rep in reports])),
        float(np.mean([rep.delta_y for rep in reports])),
    )


def explain_global(model, pairs: Sequence[CounterfactualPair], cfg: ExplainConfig | None = None) -> GlobalReport:
    """Unweighted average of per-pair locals; features outside a pair's
    changed set count as zero for that pair."""
    if not pairs:
        raise InputError("need at least one pair")
    return aggregate([explain_local(model, p, cfg) for p in pairs])
