"""Command-line entry point.

Exit codes: 0 on success, 1 on validation/parse errors (including bad
usage), 2 when an exhaustive computation exceeds its cap.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_scaling, enumeration_seconds
from .coalition import DEFAULT_EPSILON, CounterfactualPair, load_pair, save_pair
from .counterfactual import (
    CfTarget, genetic_cf, growing_spheres_cf, load_dataset, nn_pairing, patch_budget_test,
    random_ranking_band, random_search_cf, ranking_from_scores,
)
from .exceptions import CapacityError, InputError, PotshareError
from .explain import ExplainConfig, aggregate, explain_local, parse_rules, render_table
from .limits import SaturationPolicy, convergence_curve
from .models import ExternalPredictor, MinScore, load_model
from .montecarlo import McConfig, mc_micro_shapley


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("expected a comma-separated list of integers")
    return out


def _m_arg(text: str):
    vals = _ints(text)
    return vals[0] if len(vals) == 1 else tuple(vals)


def _add_model(p):
    p.add_argument("--model", action="append", help="model-spec JSON (repeat for a min-score ensemble)")
    p.add_argument("--external", help="external predictor command with {request} and {response} placeholders")
    p.add_argument("--external-batch", type=int, default=4096)


def _add_explain(p):
    p.add_argument("--m", type=_m_arg, default=5, help="uniform resolution or one per feature (comma list)")
    p.add_argument("--saturate", action="store_true", help="choose m by the saturation rule")
    p.add_argument("--saturate-eps", type=float, default=0.001)
    p.add_argument("--saturate-raw", action="store_true", help="tolerance in score units instead of fractions of the change")
    p.add_argument("--rules", default="shapley,equal,es")
    p.add_argument("--es-mode", choices=("macro", "pot"), default="macro")
    p.add_argument("--order-cap", type=int)
    p.add_argument("--mc", action="store_true", help="Monte-Carlo micro-game Shapley instead of exhaustive pots")
    p.add_argument("--perms", type=int, default=1000)
    p.add_argument("--dense", action="store_true")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="change threshold for the changed set")
    p.add_argument("--out", type=Path)
    p.add_argument("--format", choices=("csv", "json", "table", "all"), default="csv")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="potshare", description="Counterfactual attribution with interaction pots.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("explain", help="local attribution report for one pair")
    _add_model(p)
    p.add_argument("--pair", type=Path, required=True)
    _add_explain(p)
    _add_common(p)

    p = sub.add_parser("global", help="average local attributions over many pairs")
    _add_model(p)
    p.add_argument("--pairs", type=Path, help="JSON list of pair specs")
    p.add_argument("--dataset", type=Path)
    p.add_argument("--label-col", default="label")
    p.add_argument("--baseline-class", type=float)
    p.add_argument("--target-class", type=float)
    p.add_argument("--count", type=int)
    p.add_argument("--generator", choices=("nn", "random", "spheres", "genetic"), default="nn")
    p.add_argument("--target", type=float, default=0.8)
    p.add_argument("--budget", type=int, default=1000)
    _add_explain(p)
    _add_common(p)

    p = sub.add_parser("cf", help="generate a counterfactual for one baseline")
    _add_model(p)
    p.add_argument("--pair", type=Path, help="take the baseline from a pair spec's x0")
    p.add_argument("--dataset", type=Path)
    p.add_argument("--label-col", default="label")
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--method", choices=("random", "spheres", "genetic"), default="random")
    p.add_argument("--target", type=float, default=0.8)
    p.add_argument("--budget", type=int, default=1000)
    p.add_argument("--sparse", action="store_true")
    _add_common(p)

    p = sub.add_parser("patch-test", help="patch-budget curve for a ranking")
    _add_model(p)
    p.add_argument("--pair", type=Path, required=True)
    p.add_argument("--ranking", type=_ints, help="feature indices, most important first")
    p.add_argument("--rank-by", default="shapley", help="rule used to rank when --ranking is absent")
    p.add_argument("--levels", default="0.5,0.9")
    p.add_argument("--random-seeds", type=int, default=10)
    _add_explain(p)
    _add_common(p)

    p = sub.add_parser("mc", help="Monte-Carlo micro-game Shapley estimates")
    _add_model(p)
    p.add_argument("--pair", type=Path, required=True)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--perms", type=int, default=1000)
    p.add_argument("--antithetic", action="store_true")
    _add_common(p)

    p = sub.add_parser("converge", help="share trace over a resolution schedule for one pot")
    _add_model(p)
    p.add_argument("--pair", type=Path, required=True)
    p.add_argument("--pot", type=_ints, required=True)
    p.add_argument("--schedule", type=_ints, default=[1, 2, 4, 8, 16, 32, 64])
    p.add_argument("--nodes", type=int, default=257)
    p.add_argument("--fd-step", type=float, default=1e-4)
    _add_common(p)

    p = sub.add_parser("bench", help="grid-state vs enumeration scaling benchmark")
    p.add_argument("--ks", type=_ints, default=[2, 3])
    p.add_argument("--ms", type=_ints, default=list(range(2, 11)))
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--enum-cap", type=int, default=16)
    p.add_argument("--enum-n", type=_ints, default=[16, 20])
    _add_common(p)
    return parser


def _model(args):
    if args.external:
        return ExternalPredictor(args.external, batch_size=args.external_batch)
    if not args.model:
        raise InputError("pass --model (or --external)")
    models = [load_model(p) for p in args.model]
    return models[0] if len(models) == 1 else MinScore(models)


def _explain_cfg(args) -> ExplainConfig:
    return ExplainConfig(
        m=args.m, rules=parse_rules(args.rules), order_cap=args.order_cap, es_mode=args.es_mode,
        saturate=SaturationPolicy(epsilon=args.saturate_eps, relative=not args.saturate_raw) if args.saturate else None,
        use_mc=args.mc, mc=McConfig(permutations=args.perms, seed=args.seed, threads=args.threads),
        dense=args.dense,
    )


def _emit(report, args) -> None:
    if args.out is None:
        print(render_table(report) if hasattr(report, "pots") else json.dumps(report.to_dict(), indent=2))
        return
    report.write(args.out, args.format)


def _cmd_explain(args) -> None:
    pair = load_pair(args.pair, args.epsilon)
    _emit(explain_local(_model(args), pair, _explain_cfg(args)), args)


def _dataset_pairs(args, model):
    X, y, names = load_dataset(args.dataset, args.label_col)
    if args.generator == "nn":
        if args.baseline_class is None or args.target_class is None:
            raise InputError("nearest-neighbour pairing needs --baseline-class and --target-class")
        return [p for _, _, p in nn_pairing(X, y, args.baseline_class, args.target_class, args.count,
                                            args.seed, args.epsilon, names=names)]
    rows = np.arange(X.shape[0]) if args.baseline_class is None else np.flatnonzero(y == args.baseline_class)
    if args.count is not None:
        rows = rows[: args.count]
    ranges = (X.min(axis=0), X.max(axis=0))
    target = CfTarget(args.target)
    gen = {"random": lambda x, s: random_search_cf(model, x, target, args.budget, s, ranges, sparse=True),
           "spheres": lambda x, s: growing_spheres_cf(model, x, target, seed=s, ranges=ranges, sparse=True),
           "genetic": lambda x, s: genetic_cf(model, x, target, seed=s, ranges=ranges, sparse=True)}[args.generator]
    pairs = []
    for r in rows:
        res = gen(X[r], args.seed + int(r))
        if res.success:
            pairs.append(CounterfactualPair(X[r], res.x1, args.epsilon, None, tuple(names)))
    if not pairs:
        raise InputError("no counterfactual could be generated for any baseline")
    return pairs


def _cmd_global(args) -> None:
    model = _model(args)
    if args.pairs:
        try:
            specs = json.loads(args.pairs.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"{args.pairs}: {exc}") from exc
        pairs = [CounterfactualPair(s["x0"], s["x1"], args.epsilon, None,
                                    tuple(s["names"]) if "names" in s else None) for s in specs]
    elif args.dataset:
        pairs = _dataset_pairs(args, model)
    else:
        raise InputError("pass --pairs or --dataset")
    cfg = _explain_cfg(args)
    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            reports = list(pool.map(lambda p: explain_local(model, p, cfg), pairs))
    else:
        reports = [explain_local(model, p, cfg) for p in pairs]
    report = aggregate(reports)
    if args.out is None:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        report.write(args.out, args.format)


def _cmd_cf(args) -> None:
    model = _model(args)
    ranges = None
    names = None
    if args.pair:
        x0 = load_pair(args.pair).x0
    elif args.dataset:
        X, _, names = load_dataset(args.dataset, args.label_col)
        if not 0 <= args.row < X.shape[0]:
            raise InputError(f"row {args.row} out of range")
        x0 = X[args.row]
        ranges = (X.min(axis=0), X.max(axis=0))
    else:
        raise InputError("pass --pair or --dataset")
    target = CfTarget(args.target)
    if args.method == "random":
        res = random_search_cf(model, x0, target, args.budget, args.seed, ranges, sparse=args.sparse)
    elif args.method == "spheres":
        res = growing_spheres_cf(model, x0, target, seed=args.seed, ranges=ranges, sparse=args.sparse)
    else:
        res = genetic_cf(model, x0, target, seed=args.seed, ranges=ranges, sparse=args.sparse)
    if not res.success or not target.met(model, res.x1):
        raise InputError(f"no counterfactual reached score {args.target} ({args.method})")
    pair = CounterfactualPair(x0, res.x1, args.epsilon, None, tuple(names) if names else None)
    if args.out is None:
        print(json.dumps(pair.to_dict()))
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        save_pair(pair, args.out / "pair.json")


def _cmd_patch(args) -> None:
    model = _model(args)
    pair = load_pair(args.pair, args.epsilon)
    if args.ranking:
        ranking = args.ranking
    else:
        rule = parse_rules([args.rank_by])[0]
        cfg = _explain_cfg(args)
        cfg.rules = tuple(sorted(set(cfg.rules) | {rule}))
        cfg = ExplainConfig(**cfg.__dict__)
        report = explain_local(model, pair, cfg)
        ranking = ranking_from_scores(report.support, [report.locals[rule][f] for f in report.support])
    levels = [float(v) for v in args.levels.split(",")]
    curve = patch_budget_test(model, pair, ranking, levels=levels)
    mean, lo, hi = random_ranking_band(model, pair, args.random_seeds)
    rows = [["K", "score", "random_mean", "random_q10", "random_q90"]]
    rows += [[int(K), f"{s:.12g}", f"{a:.12g}", f"{b:.12g}", f"{c:.12g}"]
             for K, s, a, b, c in zip(curve.budgets, curve.scores, mean, lo, hi)]
    summary = {"ranking": list(curve.ranking), "k_at": {str(k): v for k, v in curve.k_at.items()}}
    if args.out is None:
        for r in rows:
            print(",".join(str(v) for v in r))
        print(json.dumps(summary))
        return
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "patch_curve.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    (args.out / "patch_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _cmd_mc(args) -> None:
    model = _model(args)
    pair = load_pair(args.pair, args.epsilon)
    est = mc_micro_shapley(model, pair, args.m, McConfig(args.perms, args.seed, args.antithetic, threads=args.threads))
    names = pair.feature_names()
    if args.out is None:
        print("feature,estimate,stderr")
        for f, mu, se in zip(est.features, est.mean, est.stderr):
            print(f"{names[f]},{mu:.12g},{se:.12g}")
        return
    args.out.mkdir(parents=True, exist_ok=True)
    est.to_csv(args.out / "mc_estimates.csv", names)


def _cmd_converge(args) -> None:
    model = _model(args)
    pair = load_pair(args.pair, args.epsilon)
    trace = convergence_curve(model, pair, args.pot, args.schedule, args.nodes, args.fd_step)
    if args.out is None:
        print("m,feature,share,gap")
        for m, f, s, g in trace.rows():
            print(f"{m},{f},{s:.12g},{g:.12g}")
        return
    args.out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(args.out / "convergence.csv")


def _cmd_bench(args) -> None:
    result = bench_scaling(args.ks, args.ms, args.reps, args.enum_cap, args.seed)
    summary = result.summary()
    summary["enumeration_seconds"] = {str(n): enumeration_seconds(n, max(1, args.reps // 2)) for n in args.enum_n}
    if args.out is None:
        print(json.dumps(summary, indent=2))
        return
    args.out.mkdir(parents=True, exist_ok=True)
    result.to_csv(args.out / "bench.csv")
    (args.out / "bench_summary.json").write_text(json.dumps(summary, indent=2) + "\n")


COMMANDS = {
    "explain": _cmd_explain, "global": _cmd_global, "cf": _cmd_cf, "patch-test": _cmd_patch,
    "mc": _cmd_mc, "converge": _cmd_converge, "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    if getattr(args, "threads", 1) < 1:
        print("potshare: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args)
    except CapacityError as exc:
        print(f"potshare: capacity error: {exc}", file=sys.stderr)
        return 2
    except (PotshareError, ValueError) as exc:
        print(f"potshare: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
