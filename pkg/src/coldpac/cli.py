"""Command-line front end. Every subcommand is seeded and writes CSV or JSON.

Exit codes: 0 success, 1 validation failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import conc, elbo, rpb, templin, transforms
from .data import load_idx, make_blobs
from .pmodel import ClassifierArch, TrainHyper


class UsageError(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def lambda_grid(text: str) -> np.ndarray:
    """``a:b:count`` -> ``count`` evenly spaced values from ``a`` to ``b``."""
    try:
        a, b, c = text.split(":")
        a, b, c = float(a), float(b), int(c)
    except ValueError:
        raise UsageError(f"--lambda-grid expects a:b:count, got {text!r}") from None
    if not (0 < a <= b) or c < 1:
        raise UsageError("--lambda-grid needs 0 < a <= b and count >= 1")
    return np.linspace(a, b, c)


def positive(kind):
    def parse(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def unit_interval(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


# --- data sources for rpb --------------------------------------------------


def data_source_from_args(args) -> dict:
    if args.images or args.labels:
        if not (args.images and args.labels):
            raise UsageError("--images and --labels must be given together")
        for p in (args.images, args.labels):
            if not Path(p).exists():
                raise UsageError(f"no such file: {p}")
        return {"kind": "idx", "images": args.images, "labels": args.labels, "limit": args.limit}
    return {"kind": "blobs", "n": args.n, "classes": args.classes, "dim": args.dim,
            "separation": args.separation, "seed": args.data_seed}


def load_source(src: dict):
    if src["kind"] == "idx":
        return load_idx(src["images"], src["labels"], src.get("limit"))
    return make_blobs(src["n"], src["classes"], src["dim"], src["separation"], src["seed"])


def holdout_for(src: dict, size: int):
    if src["kind"] != "blobs" or size == 0:
        return None
    return make_blobs(size, src["classes"], src["dim"], src["separation"], src["seed"] + 1_000_003)


def arch_from_args(args, ds) -> ClassifierArch:
    if args.hidden > 0:
        return ClassifierArch.one_hidden(ds.dim, args.hidden, ds.class_count)
    return ClassifierArch.linear(ds.dim, ds.class_count)


# --- subcommands -----------------------------------------------------------


def cmd_conc_coverage(args) -> int:
    if args.bound == "split-kl":
        support = conc.DiscreteSupport(tuple(float(v) for v in args.support.split(",")))
        probs = [float(v) for v in args.probs.split(",")] if args.probs else [1 / (support.K + 1)] * (support.K + 1)
        viol = conc.split_kl_coverage(support, probs, args.n, args.delta, args.trials, args.seed)
    else:
        means = [float(v) for v in args.means.split(",")]
        viol = conc.pac_bayes_kl_coverage(means, args.n, args.delta, args.trials, args.seed)
    write_csv(args.out, ["trial", "violated"], [(i, int(v)) for i, v in enumerate(viol)])
    rate = float(viol.mean())
    limit = args.delta + 3 * math.sqrt(args.delta * (1 - args.delta) / args.trials)
    print(f"violation_rate={fmt(rate)} limit={fmt(limit)}")
    return 0 if rate <= limit else 1


def cmd_cpe_scan(args) -> int:
    setting = templin.SETTINGS[args.setting]
    grid = lambda_grid(args.lambda_grid)
    rows = templin.cpe_scan(setting, grid, seed=args.seed, eval_size=args.eval_size, m=args.samples, n=args.n)
    write_csv(args.out, ["lambda", "gibbs_emp", "bayes", "dgibbs", "dbayes", "dbayes_stderr"],
              [(r.lam, r.gibbs_emp, r.bayes, r.dgibbs, r.dbayes, r.dbayes_stderr) for r in rows])
    at1 = templin.cpe_at_one(setting, args.seed, args.eval_size, args.samples, args.n)
    print(f"cpe={fmt(at1.estimate < 0)} dbayes_at_1={fmt(at1.estimate)} stderr={fmt(at1.stderr)}")
    return 0


def cmd_cpe_da(args) -> int:
    setting = templin.SETTINGS[args.setting]
    spec = setting.spec()
    task = templin.setting_task(setting, args.seed, args.n)
    holdout = templin.setting_task(setting, args.seed + 5_000_011, args.holdout_size)
    makers = {
        "identity": templin.TransformationSet.identity,
        "permutation": templin.TransformationSet.cyclic_permutations,
        "sign-flip": templin.TransformationSet.sign_flips,
    }
    out = {}
    for name in args.transforms.split(","):
        if name not in makers:
            raise UsageError(f"unknown transform set {name!r}")
        ts = makers[name](task.d)
        post = templin.fit_da_tempered_posterior(task, spec, ts, args.lam)
        r = templin.da_cov_diagnostics(post, task, spec, holdout, args.samples, ts, seed=args.seed + 3)
        out[name] = {k: getattr(r, k) for k in r.__dataclass_fields__}
    Path(args.out).write_text(json.dumps(out, indent=2))
    print(" ".join(f"{k}:gibbs_grad_cov={fmt(v['gibbs_grad_cov'])}" for k, v in out.items()))
    return 0


def cmd_transforms_demo(args) -> int:
    if args.kind == "beta":
        grid = transforms.default_grid(args.points)
        dens = transforms.beta_bernoulli_new_prior(args.a, args.b, args.lam, grid)
    else:
        grid = np.linspace(args.grid_max / args.points, args.grid_max, args.points)
        dens = transforms.inverse_gamma_new_prior(args.a, args.b, args.obs, args.lam, grid)
    write_csv(args.out, ["theta", "density"], zip(grid, dens))
    print(f"mass={fmt(np.trapezoid(dens, grid))}")
    return 0


def cmd_rpb_split(args) -> int:
    plan = rpb.geometric_split(args.n, args.T)
    temps = [rpb.implied_temperature(plan, t) for t in range(1, plan.T + 1)]
    Path(args.out).write_text(json.dumps({"split_sizes": list(plan.chunk_sizes), "implied_T": temps}))
    print("split=" + ",".join(str(s) for s in plan.chunk_sizes))
    return 0


def _hyper(args) -> TrainHyper:
    return TrainHyper(lr=args.lr, momentum=args.momentum, batch_size=args.batch_size, epochs=args.epochs, tie_stds=args.tie_stds)


def _seeds(seed: int) -> rpb.ChainSeeds:
    return rpb.ChainSeeds(*(10 * seed + np.arange(5)).tolist())


def cmd_rpb_train(args) -> int:
    src = data_source_from_args(args)
    ds = load_source(src)
    chain = rpb.train_chain(ds, arch_from_args(args, ds), args.T, args.gamma, _hyper(args), _seeds(args.seed),
                            args.sigma0, args.delta, data_source=json.dumps(src))
    chain.save(args.out)
    print(f"trained T={args.T} posteriors={len(chain.posteriors)}")
    return 0


def cmd_rpb_eval(args) -> int:
    if not Path(args.chain).exists():
        raise UsageError(f"no such file: {args.chain}")
    chain = rpb.PosteriorChain.load(args.chain)
    src = json.loads(chain.data_source)
    ds = load_source(src)
    budget = conc.ConfidenceBudget(args.delta, args.delta_prime, chain.T)
    report = rpb.evaluate_bound_chain(chain, ds, budget, holdout_for(src, args.holdout_size))
    report.write_csv(args.out)
    report.write_summary(Path(args.out).with_suffix(".json"))
    print(f"final_bound={fmt(report.final_bound)} valid={fmt(report.valid)}")
    return 0 if report.valid else 1


def cmd_rpb_baseline(args) -> int:
    src = data_source_from_args(args)
    ds = load_source(src)
    budget = conc.ConfidenceBudget(args.delta, args.delta_prime, 1)
    report = rpb.baseline(args.method, ds, arch_from_args(args, ds), _hyper(args), budget, _seeds(args.seed),
                          args.sigma0, holdout=holdout_for(src, args.holdout_size))
    report.write_csv(args.out)
    report.write_summary(Path(args.out).with_suffix(".json"))
    print(f"final_bound={fmt(report.final_bound)} valid={fmt(report.valid)}")
    return 0 if report.valid else 1


def cmd_elbo_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    cfg = elbo.QuadratureConfig(args.nodes, args.width)
    rows = []
    for _ in range(args.trials):
        D = int(rng.integers(1, args.D + 1))
        q = [elbo.Gaussian1D(float(rng.uniform(-3, 3)), float(rng.uniform(0.2, 2.0))) for _ in range(D)]
        p = elbo.Gaussian1D(float(rng.uniform(-3, 3)), float(rng.uniform(0.2, 2.0)))
        t = elbo.mixture_terms(q, p, cfg)
        lhs = elbo.meanfield_kl(q, p)
        rhs = D * (t.kl_avg + t.mutual_info)
        rows.append((D, lhs, t.kl_avg, t.mutual_info, rhs, abs(lhs - rhs)))
    write_csv(args.out, ["D", "lhs", "kl_avg", "mi", "rhs", "residual"], rows)
    worst = max(r[-1] for r in rows)
    print(f"max_residual={fmt(worst)}")
    return 0 if worst < 1e-6 else 1


# --- parser ----------------------------------------------------------------


def _add_data_flags(p):
    p.add_argument("--n", type=positive(int), default=4000)
    p.add_argument("--classes", type=positive(int), default=2)
    p.add_argument("--dim", type=positive(int), default=2)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--limit", type=positive(int))
    p.add_argument("--hidden", type=int, default=0)


def _add_train_flags(p):
    p.add_argument("--epochs", type=positive(int), default=30)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--momentum", type=float, default=0.95)
    p.add_argument("--batch-size", type=positive(int), default=250)
    p.add_argument("--sigma0", type=positive(float), default=0.03)
    p.add_argument("--tie-stds", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coldpac", allow_abbrev=False)
    parser.add_argument("--threads", type=positive(int), default=1, help="worker threads (computations are single-threaded)")
    top = parser.add_subparsers(dest="group", required=True)

    g = top.add_parser("conc").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("coverage")
    p.add_argument("--bound", choices=["split-kl", "pac-bayes-kl"], default="split-kl")
    p.add_argument("--support", default="0,0.3333333333333333,0.6666666666666666,1")
    p.add_argument("--probs")
    p.add_argument("--means", default="0.3,0.35")
    p.add_argument("--n", type=positive(int), default=100)
    p.add_argument("--delta", type=unit_interval, default=0.05)
    p.add_argument("--trials", type=positive(int), default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_conc_coverage)

    g = top.add_parser("cpe").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("scan")
    p.add_argument("--setting", choices=sorted(templin.SETTINGS), required=True)
    p.add_argument("--n", type=positive(int))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-grid", default="0.25:8:32")
    p.add_argument("--eval-size", type=positive(int), default=10_000)
    p.add_argument("--samples", type=positive(int), default=10_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cpe_scan)
    p = g.add_parser("da")
    p.add_argument("--setting", choices=sorted(templin.SETTINGS), default="well-specified")
    p.add_argument("--n", type=positive(int))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lam", type=positive(float), default=1.0)
    p.add_argument("--transforms", default="identity,permutation,sign-flip")
    p.add_argument("--holdout-size", type=positive(int), default=10_000)
    p.add_argument("--samples", type=positive(int), default=10_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cpe_da)

    g = top.add_parser("transforms").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("demo")
    p.add_argument("--kind", choices=["beta", "invgamma"], default="beta")
    p.add_argument("--a", type=positive(float), default=1.0, help="Beta a, or inverse-gamma shape")
    p.add_argument("--b", type=positive(float), default=1.0, help="Beta b, or inverse-gamma scale")
    p.add_argument("--lam", type=positive(float), default=2.0)
    p.add_argument("--obs", type=int, default=1, help="observation count for the inverse-gamma prior")
    p.add_argument("--points", type=positive(int), default=1001)
    p.add_argument("--grid-max", type=positive(float), default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transforms_demo)

    g = top.add_parser("rpb").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("split")
    p.add_argument("--n", type=positive(int), required=True)
    p.add_argument("--T", type=positive(int), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rpb_split)
    p = g.add_parser("train")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--T", type=positive(int), default=2)
    p.add_argument("--gamma", type=unit_interval, default=0.5)
    p.add_argument("--delta", type=unit_interval, default=0.025)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rpb_train)
    p = g.add_parser("eval")
    p.add_argument("--chain", required=True)
    p.add_argument("--delta", type=unit_interval, default=0.025)
    p.add_argument("--delta-prime", type=unit_interval, default=0.01)
    p.add_argument("--holdout-size", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rpb_eval)
    p = g.add_parser("baseline")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--method", choices=["uninformed", "informed", "informed_excess"], required=True)
    p.add_argument("--delta", type=unit_interval, default=0.025)
    p.add_argument("--delta-prime", type=unit_interval, default=0.01)
    p.add_argument("--holdout-size", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rpb_baseline)

    g = top.add_parser("elbo").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("verify")
    p.add_argument("--D", type=positive(int), default=4)
    p.add_argument("--trials", type=positive(int), default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=positive(int), default=4001)
    p.add_argument("--width", type=positive(float), default=8.0)
    p.add_argument("--out", default="elbo.csv")
    p.set_defaults(func=cmd_elbo_verify)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    try:
        return args.func(args)
    except (UsageError, conc.DomainError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
