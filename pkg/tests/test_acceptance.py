"""Acceptance criteria 1-10.

Each test prints one ``PASS``/``FAIL`` line with the measured figure.  Run
``pytest tests/test_acceptance.py -v -s`` or ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import itertools
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import make_zoo  # noqa: E402
from potshare.bench import bench_scaling, enumeration_seconds, random_residual, time_call  # noqa: E402
from potshare.coalition import (  # noqa: E402
    CounterfactualPair, coalition_values, dividends, mobius, zeta,
)
from potshare.counterfactual import patch_budget_test, ranking_from_scores  # noqa: E402
from potshare.cube import GridSpec, ResidualGrid, eval_cube, residual_grid  # noqa: E402
from potshare.explain import ExplainConfig, explain_global, explain_local  # noqa: E402
from potshare.limits import convergence_curve, diagonal_ig, local_shapley_shares  # noqa: E402
from potshare.microgame import PRESETS, MicroGame, enumerate_les, grid_state_shares, les_preset  # noqa: E402
from potshare.models import LinearModel, MultilinearModel, predict  # noqa: E402
from potshare.montecarlo import McConfig, mc_micro_shapley  # noqa: E402

ALL_RULES = ("equal_split", "micro_shapley", "solidarity", "equal_surplus")


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {detail}"
    capman = _CAPTURE.get("capman")
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print(line)
    else:
        print(line)
    assert ok, line


_CAPTURE: dict = {}


@pytest.fixture(autouse=True)
def _capture(request):
    _CAPTURE["capman"] = request.config.pluginmanager.getplugin("capturemanager")
    yield
    _CAPTURE.pop("capman", None)


def _pairs(seed: int, count: int, d: int = 4):
    rng = np.random.default_rng(seed)
    return [CounterfactualPair(rng.random(d), rng.random(d)) for _ in range(count)]


def test_criterion_01_oracle_equivalence():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(2, 4))
        m = tuple(int(v) for v in rng.integers(1, 4, size=k))
        mg = MicroGame(ResidualGrid.from_array(random_residual(tuple(v + 1 for v in m), rng)))
        for rule in PRESETS:
            w = les_preset(rule, mg.n)
            worst = max(worst, float(np.max(np.abs(grid_state_shares(mg, w) - enumerate_les(mg, w).shares))))
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-10 and elapsed <= 30,
            f"grid-state vs enumeration max |err| = {worst:.2e} (<= 1e-10), {elapsed:.2f} s (<= 30 s)")


def test_criterion_02_degenerate_equal_split():
    rng = np.random.default_rng(202)
    worst = 0.0
    for k in (2, 3, 4):
        for _ in range(20):
            mg = MicroGame(ResidualGrid.from_array(random_residual((2,) * k, rng)))
            shares = grid_state_shares(mg, les_preset("shapley", k))
            worst = max(worst, float(np.max(np.abs(shares - mg.rg.phi / k))))
    # and on real model pots
    for model in make_zoo().values():
        for pair in _pairs(7, 3):
            for u in [(0, 1), (0, 2, 3), (0, 1, 2, 3)]:
                rg = residual_grid(eval_cube(model, pair, GridSpec.make(u, 1)))
                shares = grid_state_shares(MicroGame(rg), les_preset("shapley", len(u)))
                worst = max(worst, float(np.max(np.abs(shares - rg.phi / len(u)))))
    verdict(2, worst <= 1e-12, f"m=1 micro-Shapley vs phi/|u| max |err| = {worst:.2e} (<= 1e-12)")


def test_criterion_03_boundary_and_corner():
    boundary_bad = 0
    worst_rel = 0.0
    zoo = make_zoo()
    for model in zoo.values():
        for pair in _pairs(33, 4):
            dt = dividends(coalition_values(model, pair))
            for u, phi in dt.pots(2):
                for m in (1, 3):
                    rg = residual_grid(eval_cube(model, pair, GridSpec.make(u, m)))
                    for p in itertools.product(*(range(s) for s in rg.grid.shape)):
                        if 0 in p and rg.r[p] != 0.0:
                            boundary_bad += 1
                    scale = max(abs(phi), 1e-3 * max(1.0, abs(dt.total)))
                    worst_rel = max(worst_rel, abs(rg.phi - phi) / scale)
    verdict(3, boundary_bad == 0 and worst_rel <= 1e-9,
            f"{boundary_bad} non-zero boundary states; corner vs dividend max rel err = {worst_rel:.2e} "
            f"(<= 1e-9) over {len(zoo)} model families")


def test_criterion_04_moebius_round_trip():
    rng = np.random.default_rng(404)
    worst = 0.0
    for k in range(1, 11):
        for _ in range(5):
            v = rng.normal(size=1 << k)
            v[0] = 0.0
            worst = max(worst, float(np.max(np.abs(zeta(mobius(v)) - v))))
    worst_eff = 0.0
    for model in make_zoo().values():
        for pair in _pairs(44, 4):
            rep = explain_local(model, pair)
            dt = dividends(coalition_values(model, pair))
            worst_eff = max(worst_eff, abs(dt.total - rep.delta_y) / max(abs(rep.delta_y), 1e-300))
    verdict(4, worst <= 1e-12 and worst_eff <= 1e-9,
            f"round trip max |err| = {worst:.2e} (<= 1e-12); sum phi vs Delta y rel err = {worst_eff:.2e} (<= 1e-9)")


def test_criterion_05_aumann_shapley_limit():
    model = lambda X: X[:, 0] ** 2 * X[:, 1]  # noqa: E731
    pair = CounterfactualPair([0.0, 0.0], [1.0, 1.0])
    trace = convergence_curve(model, pair, (0, 1), [8, 16, 32, 64])
    target = np.array([2 / 3, 1 / 3])
    at64 = float(np.max(np.abs(trace.shares[-1] - target)))
    gaps = np.max(np.abs(np.array(trace.shares) - target), axis=1)
    shrink = gaps[1:] / gaps[:-1]
    ig = diagonal_ig(model, pair, (0, 1), nodes=257)
    eff = abs(ig.total - 1.0)
    ok = at64 <= 0.02 and np.all(shrink <= 0.75) and eff <= 1e-4
    verdict(5, ok, f"m=64 gap = {at64:.4f} (<= 0.02); gap ratios per doubling = "
                   f"{', '.join(f'{r:.3f}' for r in shrink)} (<= 0.75); IG efficiency err = {eff:.1e} (<= 1e-4)")


def test_criterion_06_efficiency_everywhere():
    worst_pot = worst_pair = worst_global = 0.0
    zoo = make_zoo()
    for model in zoo.values():
        pairs = _pairs(66, 5)
        for es_mode in ("macro", "pot"):
            cfg = ExplainConfig(m=3, rules=ALL_RULES, es_mode=es_mode)
            reps = [explain_local(model, p, cfg) for p in pairs]
            for rep in reps:
                scale = max(abs(rep.delta_y), 1e-12)
                for pot in rep.pots:
                    for sh in pot.shares.values():
                        worst_pot = max(worst_pot, abs(sh.sum() - pot.phi) / scale)
                for r in ALL_RULES:
                    worst_pair = max(worst_pair, abs(rep.locals[r].sum() - rep.delta_y) / scale)
            g = explain_global(model, pairs, cfg)
            mean_dy = float(np.mean([rep.delta_y for rep in reps]))
            for r in ALL_RULES:
                worst_global = max(worst_global, abs(g.averages[r].sum() - mean_dy) / max(abs(mean_dy), 1e-12))
    worst_mc = 0.0
    for model in zoo.values():
        for pair in _pairs(67, 2):
            for m in (1, 3):
                est = mc_micro_shapley(model, pair, m, McConfig(150, seed=m))
                dy = predict(model, pair.x1) - predict(model, pair.x0)
                worst_mc = max(worst_mc, abs(est.mean.sum() - dy))
    ok = max(worst_pot, worst_pair, worst_global) <= 1e-9 and worst_mc <= 1e-12
    verdict(6, ok, f"rel err pot/pair/global = {worst_pot:.1e}/{worst_pair:.1e}/{worst_global:.1e} (<= 1e-9); "
                   f"MC telescoping abs err = {worst_mc:.1e}")


def _mc_games():
    rng = np.random.default_rng(707)
    games = []
    for _ in range(3):
        terms = tuple((u, float(rng.uniform(-1, 1)))
                      for u in [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2)])
        pair = CounterfactualPair(0.3 * rng.random(3), 0.7 + 0.3 * rng.random(3))
        games.append((MultilinearModel(3, terms), pair))
    return games


def test_criterion_07_monte_carlo_consistency():
    t0 = time.perf_counter()
    hits = cells = 0
    worst_sum = 0.0
    for model, pair in _mc_games():
        dy = predict(model, pair.x1) - predict(model, pair.x0)
        for m in (1, 2):
            exact = local_shapley_shares(model, pair, m)
            for seed in range(20):
                est = mc_micro_shapley(model, pair, m, McConfig(20_000, seed=seed))
                err = np.abs(est.mean - exact[list(est.features)])
                hits += int(np.sum(err <= 0.01))
                cells += err.shape[0]
                worst_sum = max(worst_sum, abs(est.mean.sum() - dy))
    elapsed = time.perf_counter() - t0
    frac = hits / cells
    verdict(7, frac >= 0.95 and worst_sum <= 1e-12 and elapsed <= 60,
            f"{hits}/{cells} cells within 0.01 ({frac:.1%} >= 95%); sum vs Delta y err = {worst_sum:.1e} "
            f"(<= 1e-12); {elapsed:.1f} s (<= 60 s)")


def test_criterion_08_scaling():
    mg = MicroGame(ResidualGrid.from_array(random_residual((11, 11, 11), np.random.default_rng(8))))
    t_grid = time_call(lambda: grid_state_shares(mg, les_preset("shapley", 30)), 3)
    ratio = enumeration_seconds(20) / enumeration_seconds(16)
    res = bench_scaling(ks=(2, 3), ms=range(2, 11), repetitions=5, enum_cap=16)
    r2 = res.grid_fit.r2
    es = {(r.k, r.m): r.es_seconds for r in res.records}
    es_ratio = max(es[(k, 10)] / es[(k, 2)] for k in (2, 3))
    ok = t_grid < 1.0 and ratio >= 8 and r2 >= 0.95 and es_ratio <= 3
    verdict(8, ok, f"grid-state k=3 m=10 {t_grid * 1e3:.2f} ms (< 1 s); enum n=20/n=16 = {ratio:.1f}x (>= 8); "
                   f"log-fit R^2 = {r2:.3f} (>= 0.95); ES m=10/m=2 = {es_ratio:.2f} (<= 3)")


def test_criterion_09_patch_budget():
    model = LinearModel([0.35, -0.15, 0.25, 0.1], bias=0.05)
    pair = CounterfactualPair([0.2, 0.1, 0.0, 0.3], [0.9, 0.8, 1.0, 0.6])
    rep = explain_local(model, pair, ExplainConfig(m=4, rules="shapley"))
    ranking = ranking_from_scores(pair.changed, rep.locals["micro_shapley"][list(pair.changed)])
    best = patch_budget_test(model, pair, ranking)
    dominated = all(np.all(best.scores >= patch_budget_test(model, pair, perm).scores)
                    for perm in itertools.permutations(pair.changed))
    g0 = predict(model, pair.x0)
    ends = best.scores[0] == g0 and best.scores[-1] == g0 + rep.delta_y
    verdict(9, dominated and ends,
            f"attribution ranking {ranking} dominates all 24 rankings: {dominated}; "
            f"endpoints exact: {ends}")


def test_criterion_10_reproducibility(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"type": "mlp", "output": "sigmoid", "layers": [
        {"weights": [[1.0, -0.5], [0.3, 0.8], [-0.6, 0.4]], "bias": [0.1, -0.2]},
        {"weights": [[1.2], [-0.7]], "bias": [0.05]}]}))
    (tmp_path / "p.json").write_text(json.dumps({"x0": [0.1, 0.2, 0.3], "x1": [0.9, 0.4, 0.8]}))
    (tmp_path / "ps.json").write_text(json.dumps([{"x0": [0, 0, 0], "x1": [1, 1, 1]},
                                                  {"x0": [0.2, 0.5, 0.1], "x1": [0.7, 0.1, 0.9]}]))
    common = ["--model", str(tmp_path / "m.json"), "--threads", "1", "--seed", "3"]
    commands = {
        "explain": ["explain", "--pair", str(tmp_path / "p.json"), "--format", "all",
                    "--rules", "eq,shapley,solidarity,es"],
        "explain-mc": ["explain", "--pair", str(tmp_path / "p.json"), "--format", "all", "--mc", "--perms", "500"],
        "global": ["global", "--pairs", str(tmp_path / "ps.json"), "--format", "all"],
        "mc": ["mc", "--pair", str(tmp_path / "p.json"), "--perms", "500", "--m", "3"],
        "cf": ["cf", "--pair", str(tmp_path / "p.json"), "--method", "genetic", "--target", "0.6"],
        "patch": ["patch-test", "--pair", str(tmp_path / "p.json")],
        "converge": ["converge", "--pair", str(tmp_path / "p.json"), "--pot", "0,1", "--schedule", "1,2,4"],
    }
    differing = []
    for name, argv in commands.items():
        blobs = []
        for run in ("a", "b"):
            out = tmp_path / f"{name}-{run}"
            proc = subprocess.run([sys.executable, "-m", "potshare.cli", *argv, *common, "--out", str(out)],
                                  capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            blobs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if not blobs[0] or blobs[0] != blobs[1]:
            differing.append(name)
    verdict(10, not differing,
            f"{len(commands) - len(differing)}/{len(commands)} CLI runs byte-identical across two executions"
            + (f" (differ: {differing})" if differing else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
