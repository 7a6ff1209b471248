"""Command-line interface.

Subcommands: ``decompose`` (ALS on a long-format array file), ``bayes``
(Gibbs chain on a file), ``simulate`` (synthetic study arrays), ``study``
(the three simulation studies), ``means-fit``, ``probit-fit``, and
``report`` (summarize or verify a study output directory).

Every subcommand accepts ``--seed``, ``--config <json>`` (keys override
defaults; explicit flags win), and ``--out <dir>``.  Exit codes: 0 on
success, 1 on usage errors, 2 on malformed data.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .als import AlsConfig, als_fit
from .gibbs import ChainConfig, dic, ess, run_chain
from .io import (
    DataFormatError,
    read_crosstab,
    read_long,
    read_panel,
    save_chain,
    verify_report,
    write_long,
    write_report,
)
from .means import MeansConfig, means_fit
from .probit import ProbitConfig, probit_fit
from .rng import RngStream
from .simulate import SimSpec, simulate_theta
from .studies import (
    StudySchedule,
    run_known_rank_study,
    run_misspec_study,
    run_rank_selection,
)

__all__ = ["main", "cli_main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_dims(text):
    try:
        dims = tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise UsageError(f"bad dims {text!r}")
    if len(dims) < 2 or min(dims) < 1:
        raise UsageError(f"bad dims {text!r}")
    return dims


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--config", type=Path, default=None, help="JSON config overriding defaults")
    p.add_argument("--out", type=Path, default=None, help="output directory")


def _need_out(args):
    if args.out is None:
        raise UsageError("this subcommand requires --out")
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _write_matrix_csv(mat, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.atleast_2d(mat):
            w.writerow([repr(float(v)) for v in row])


def _cmd_simulate(args):
    out = _need_out(args)
    spec = SimSpec(
        dims=_parse_dims(args.dims),
        rank=args.rank,
        n_replicates=args.replicates,
        noise_ratio=args.noise,
        seed=args.seed,
    )
    base = RngStream(spec.seed)
    for rep in range(spec.n_replicates):
        theta, y = simulate_theta(spec, rng=base.substream("replicate", rep))
        write_long(theta, out / f"theta_{rep:03d}.txt")
        write_long(y, out / f"y_{rep:03d}.txt")
    _write_json(
        {"command": "simulate", "spec": dataclasses.asdict(spec), "version": __version__},
        out / "simulate.meta.json",
    )
    print(f"wrote {spec.n_replicates} replicate(s) to {out}")
    return 0


def _cmd_decompose(args):
    a = read_long(args.file)
    cfg = AlsConfig(
        rank=args.rank,
        n_starts=args.starts,
        rel_tol=args.tol,
        max_sweeps=args.max_sweeps,
        seed=args.seed,
    )
    res = als_fit(a, cfg)
    ratio = res.relative_residual(a)
    print(f"rank {args.rank} fit: rss={res.rss:.6g} residual ratio={ratio:.6g} "
          f"sweeps={res.sweeps} converged={res.converged}")
    if args.out is not None:
        out = _need_out(args)
        for k, f in enumerate(res.factors):
            _write_matrix_csv(f, out / f"factor_mode{k + 1}.csv")
        _write_json(
            {
                "command": "decompose",
                "rank": args.rank,
                "rss": res.rss,
                "residual_ratio": ratio,
                "sweeps": res.sweeps,
                "converged": res.converged,
                "dims": list(a.dims),
                "version": __version__,
            },
            out / "decompose.meta.json",
        )
    return 0


def _cmd_bayes(args):
    a = read_long(args.file)
    cfg = ChainConfig(
        rank=args.rank,
        n_burn=args.burn,
        n_iter=args.iters,
        thin=args.thin,
        mode=args.mode,
        tau2_flat=args.tau2,
        psi_scale=args.psi_scale,
        seed=args.seed,
    )
    chain = run_chain(a, cfg)
    d, p_eff = dic(chain, a)
    e = ess(chain.theta_norm2) if chain.count >= 10 else float("nan")
    print(
        f"{args.mode} chain: saved={chain.count} DIC={d:.3f} p_eff={p_eff:.3f} "
        f"mean sigma2={chain.sigma2.mean():.4g} ESS(|Theta|^2)={e:.0f}"
    )
    if args.out is not None:
        out = _need_out(args)
        save_chain(chain, out)
        _write_json(
            {"command": "bayes", "dic": d, "p_eff": p_eff, "version": __version__},
            out / "bayes.meta.json",
        )
    return 0


def _schedule_from_args(args):
    if args.paper_scale:
        sched = StudySchedule.paper_scale()
        reps = 100
    else:
        sched = StudySchedule()
        reps = 20
    if args.burn is not None:
        sched.n_burn = args.burn
    if args.iters is not None:
        sched.n_iter = args.iters
    if args.replicates is not None:
        reps = args.replicates
    return sched, reps


def _cmd_study(args):
    out = _need_out(args)
    sched, reps = _schedule_from_args(args)
    spec = SimSpec(
        dims=_parse_dims(args.dims),
        rank=args.true_rank,
        n_replicates=reps,
        noise_ratio=args.noise,
        seed=args.seed,
    )
    save_dir = out if args.save_arrays else None
    if args.kind == "known-rank":
        report = run_known_rank_study(spec, schedule=sched, save_dir=save_dir)
    elif args.kind == "misspec":
        report = run_misspec_study(spec, schedule=sched, save_dir=save_dir)
    else:
        report = run_rank_selection(spec, schedule=sched, save_dir=save_dir)
    path = write_report(report, out)
    print(f"study {args.kind}: {len(report.rows)} rows -> {path}")
    if report.kind == "rank-select":
        print("selection frequencies:")
        for r, freq in report.selection["frequencies"].items():
            print(f"  rank {r}: {freq:.2f}")
    else:
        for method in sorted({r["method"] for r in report.rows}):
            vals = report.ratio(method)
            print(f"  {method}: mean MSE ratio {vals.mean():.4f}")
    return 0


def _cmd_means_fit(args):
    data = read_crosstab(args.file)
    cfg = MeansConfig(
        rank=args.rank,
        n_burn=args.burn,
        n_iter=args.iters,
        thin=args.thin,
        seed=args.seed,
        standardize=not args.no_standardize,
    )
    res = means_fit(data, cfg)
    print(
        f"means fit: {data.n} rows, {data.n_cells} cells, rank {args.rank}, "
        f"systematic-part fit ratio {res.b_fit_ratio:.3g}"
    )
    if args.out is not None:
        out = _need_out(args)
        with open(out / "cell_means.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                [f"x{k + 1}" for k in range(data.n_modes)]
                + ["n"]
                + [f"ybar{d + 1}" for d in range(data.p)]
                + [f"mu_hat{d + 1}" for d in range(data.p)]
                + [f"beta_hat{d + 1}" for d in range(data.p)]
            )
            for c in range(data.n_cells):
                lev = np.unravel_index(c, data.levels)
                w.writerow(
                    [int(v) + 1 for v in lev]
                    + [int(data.counts[c])]
                    + [repr(float(v)) for v in data.ybar[c]]
                    + [repr(float(v)) for v in res.mu_hat[c]]
                    + [repr(float(v)) for v in res.b_hat[c]]
                )
        for k, f in enumerate(res.u_hat):
            _write_matrix_csv(f, out / f"factor_x{k + 1}.csv")
        _write_matrix_csv(res.v_hat, out / "factor_variables.csv")
        _write_matrix_csv(res.shrinkage, out / "shrinkage.csv")
        _write_json(
            {
                "command": "means-fit",
                "rank": args.rank,
                "b_fit_ratio": res.b_fit_ratio,
                "ess": res.ess,
                "standardized": not args.no_standardize,
                "y_mean": list(res.y_mean),
                "y_scale": list(res.y_scale),
                "version": __version__,
            },
            out / "means.meta.json",
        )
    return 0


def _cmd_probit_fit(args):
    panel = read_panel(args.file)
    cfg = ProbitConfig(
        rank=args.rank,
        n_burn=args.burn,
        n_iter=args.iters,
        thin=args.thin,
        seed=args.seed,
    )
    res = probit_fit(panel, cfg)
    print(f"probit fit: {panel.n_obs} dyad-years, rank {args.rank}")
    for d in range(len(res.beta_mean)):
        lo, hi = res.beta_interval[d]
        print(
            f"  beta[{d + 1}] = {res.beta_mean[d]:+.4f} (sd {res.beta_sd[d]:.4f}, "
            f"95% [{lo:+.4f}, {hi:+.4f}], ESS {res.beta_ess[d]:.0f})"
        )
    if args.out is not None:
        out = _need_out(args)
        with open(out / "beta_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["coef", "mean", "sd", "lo95", "hi95", "ess"])
            for d in range(len(res.beta_mean)):
                w.writerow(
                    [
                        f"x{d + 1}",
                        repr(float(res.beta_mean[d])),
                        repr(float(res.beta_sd[d])),
                        repr(float(res.beta_interval[d, 0])),
                        repr(float(res.beta_interval[d, 1])),
                        repr(float(res.beta_ess[d])),
                    ]
                )
        _write_matrix_csv(res.u_hat, out / "factor_nodes.csv")
        _write_matrix_csv(res.v_hat, out / "factor_times.csv")
        _write_matrix_csv(res.cutoffs_mean[1:-1], out / "cutoffs.csv")
        _write_json(
            {
                "command": "probit-fit",
                "rank": args.rank,
                "labels": res.labels,
                "beta_ess": [float(v) for v in res.beta_ess],
                "version": __version__,
            },
            out / "probit.meta.json",
        )
    return 0


def _cmd_report(args):
    if args.verify:
        ok, problems = verify_report(args.dir)
        if ok:
            print("report verified: all ratios reproducible from saved arrays")
            return 0
        for p in problems:
            print(f"verify: {p}", file=sys.stderr)
        return 2
    found = False
    for name in ("known_rank.csv", "misspec.csv", "rank_select.csv"):
        f = Path(args.dir) / name
        if not f.exists():
            continue
        found = True
        with open(f, newline="") as fh:
            rows = list(csv.DictReader(fh))
        print(f"{name}: {len(rows)} rows")
        methods = sorted({r["method"] for r in rows})
        ranks = sorted({int(r["rank"]) for r in rows})
        for m in methods:
            for rk in ranks:
                vals = [float(r["mse_ratio"]) for r in rows if r["method"] == m and int(r["rank"]) == rk]
                if vals:
                    print(f"  {m} rank {rk}: mean MSE ratio {np.mean(vals):.4f} over {len(vals)}")
    table = Path(args.dir) / "rank_select_table.csv"
    if table.exists():
        found = True
        with open(table, newline="") as fh:
            for row in csv.DictReader(fh):
                print(f"  selected rank {row['rank']}: frequency {row['frequency']}")
    if not found:
        raise DataFormatError("no report files found", args.dir)
    return 0


def build_parser():
    parser = _Parser(prog="multiway", description=__doc__)
    parser.add_argument("--version", action="version", version=f"multiway {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic study arrays")
    p.add_argument("--dims", default="10,8,6")
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--replicates", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("decompose", help="alternating least squares on an array file")
    p.add_argument("file", type=Path)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--starts", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-sweeps", type=int, default=5000)
    _add_common(p)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("bayes", help="Gibbs chain on an array file")
    p.add_argument("file", type=Path)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--mode", choices=("hier", "flat"), default="hier")
    p.add_argument("--burn", type=int, default=1000)
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--tau2", type=float, default=100.0)
    p.add_argument("--psi-scale", choices=("gram", "conjugate"), default="gram")
    _add_common(p)
    p.set_defaults(func=_cmd_bayes)

    p = sub.add_parser("study", help="run a simulation study")
    p.add_argument("kind", choices=("known-rank", "misspec", "rank-select"))
    p.add_argument("--dims", default="10,8,6")
    p.add_argument("--true-rank", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--burn", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true",
                   help="100 replicates and 10000-iteration chains")
    p.add_argument("--save-arrays", action=argparse.BooleanOptionalAction, default=True,
                   help="save per-replicate arrays for report --verify")
    _add_common(p)
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("means-fit", help="hierarchical means model on a crosstab CSV")
    p.add_argument("file", type=Path)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--burn", type=int, default=2000)
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--no-standardize", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_means_fit)

    p = sub.add_parser("probit-fit", help="ordered-probit network model on a panel CSV")
    p.add_argument("file", type=Path)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--burn", type=int, default=500)
    p.add_argument("--iters", type=int, default=50000)
    p.add_argument("--thin", type=int, default=10)
    _add_common(p)
    p.set_defaults(func=_cmd_probit_fit)

    p = sub.add_parser("report", help="summarize or verify a study directory")
    p.add_argument("dir", type=Path)
    p.add_argument("--verify", action="store_true",
                   help="recompute ratios from saved arrays and diff")
    _add_common(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            try:
                with open(args.config) as fh:
                    overrides = json.load(fh)
            except (OSError, json.JSONDecodeError) as e:
                raise DataFormatError(f"bad config file: {e}", args.config)
            if not isinstance(overrides, dict):
                raise DataFormatError("config must be a JSON object", args.config)
            clean = {k.replace("-", "_"): v for k, v in overrides.items()}
            unknown = [k for k in clean if not hasattr(args, k)]
            if unknown:
                raise UsageError(f"unknown config keys: {unknown}")
            parser.set_defaults(**clean)
            args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataFormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


cli_main = main


if __name__ == "__main__":
    sys.exit(main())
