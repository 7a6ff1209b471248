"""Simulation studies comparing least-squares and Bayes estimators.

Each study simulates replicate (Theta, Y) pairs, fits one or more
estimators, and records two ratios per fit:

* ``mse_ratio``  = |Theta_hat - Theta|^2 / |Y - Theta|^2, performance
  relative to the unbiased estimate Y;
* ``rss_ratio``  = |Y - Theta_hat|^2 / |Y|^2, fidelity to the data.

Every (replicate, rank, method) cell draws from its own derived random
substream, so serial and parallel execution produce identical reports.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .als import AlsConfig, als_fit, rank_r_approx
from .arrays import MultiwayArray, compose_values
from .gibbs import ChainConfig, dic, posterior_theta, run_chain
from .rng import RngStream
from .simulate import SimSpec, simulate_theta

__all__ = [
    "StudySchedule",
    "ExperimentReport",
    "KNOWN_RANK_METHODS",
    "run_known_rank_study",
    "run_misspec_study",
    "run_rank_selection",
    "worker_count",
]

KNOWN_RANK_METHODS = ("ls", "hb", "hb_point", "flat")


@dataclass
class StudySchedule:
    """Chain and fit sizes for a study run (desk scale by default)."""

    n_burn: int = 500
    n_iter: int = 2000
    ls_starts: int = 20
    chain_als_starts: int = 10
    tau2_flat: float = 100.0
    psi_scale: str = "gram"

    @classmethod
    def paper_scale(cls):
        return cls(n_burn=1000, n_iter=10000)


@dataclass
class ExperimentReport:
    kind: str
    spec: SimSpec
    rows: list = field(default_factory=list)
    selection: dict | None = None

    def ratio(self, method, rank=None, key="mse_ratio"):
        """Per-replicate ratio vector for one method (and rank, if given)."""
        vals = [
            (r["replicate"], r[key])
            for r in self.rows
            if r["method"] == method and (rank is None or r["rank"] == rank)
        ]
        vals.sort()
        return np.array([v for _, v in vals])


def worker_count():
    """Worker-pool size, set only through the MULTIWAY_WORKERS variable."""
    try:
        return max(1, int(os.environ.get("MULTIWAY_WORKERS", "1")))
    except ValueError:
        return 1


def _ratios(theta, y, theta_hat):
    err = float(np.sum((theta_hat - theta.values) ** 2))
    noise = float(np.sum((y.values - theta.values) ** 2))
    rss = float(np.sum((y.values - theta_hat) ** 2))
    ynorm = float(np.sum(y.values**2))
    return err / noise, rss / ynorm


def _fit_cell(theta, y, rank, methods, schedule, rng, save=None):
    """Fit the requested methods on one replicate at one rank."""
    rows = []
    chain_info = {}
    ls = als_fit(
        y,
        AlsConfig(rank=rank, n_starts=schedule.ls_starts),
        rng=rng.substream("ls"),
    )
    ls_theta = compose_values(ls.factors)
    if "ls" in methods:
        rows.append(("ls", ls_theta))
    need_hb = {"hb", "hb_point", "dic"} & set(methods)
    if need_hb:
        cfg = ChainConfig(
            rank=rank,
            n_burn=schedule.n_burn,
            n_iter=schedule.n_iter,
            thin=1,
            mode="hier",
            psi_scale=schedule.psi_scale,
        )
        chain = run_chain(y, cfg, rng=rng.substream("hb"), ls_init=ls)
        hb_theta = posterior_theta(chain).values
        if "hb" in methods:
            rows.append(("hb", hb_theta))
        if "hb_point" in methods:
            point = rank_r_approx(
                MultiwayArray(hb_theta), rank, n_starts=schedule.chain_als_starts,
                rng=rng.substream("hb-point"),
            )
            rows.append(("hb_point", compose_values(point)))
        if "dic" in methods:
            chain_info["dic"], chain_info["p_eff"] = dic(chain, y)
    if "flat" in methods:
        cfg = ChainConfig(
            rank=rank,
            n_burn=schedule.n_burn,
            n_iter=schedule.n_iter,
            thin=1,
            mode="flat",
            tau2_flat=schedule.tau2_flat,
        )
        chain = run_chain(y, cfg, rng=rng.substream("flat"), ls_init=ls)
        rows.append(("flat", posterior_theta(chain).values))
    out = []
    for method, theta_hat in rows:
        mse_ratio, rss_ratio = _ratios(theta, y, theta_hat)
        out.append(
            {
                "method": method,
                "rank": rank,
                "mse_ratio": mse_ratio,
                "rss_ratio": rss_ratio,
            }
        )
        if save is not None:
            np.save(save / f"thetahat_{method}_rank{rank}.npy", theta_hat)
    return out, chain_info


def _replicate_data(spec, rep):
    rng = RngStream(spec.seed).substream("replicate", rep)
    return simulate_theta(spec, rng=rng)


def _run_cells(work, n_workers):
    if n_workers > 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=n_workers)(delayed(fn)() for fn in work)
    return [fn() for fn in work]


def _save_dir(save_dir, rep):
    if save_dir is None:
        return None
    d = save_dir / "arrays" / f"rep{rep:03d}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def run_known_rank_study(
    spec, methods=KNOWN_RANK_METHODS, schedule=None, save_dir=None
):
    """Fit every method at the true rank on each replicate."""
    schedule = schedule or StudySchedule()
    base = RngStream(spec.seed)

    def make_job(rep):
        def job():
            theta, y = _replicate_data(spec, rep)
            save = _save_dir(save_dir, rep)
            if save is not None:
                np.save(save / "theta.npy", theta.values)
                np.save(save / "y.npy", y.values)
            rows, _ = _fit_cell(
                theta, y, spec.rank, methods, schedule,
                base.substream("fit", rep, spec.rank), save=save,
            )
            for r in rows:
                r["replicate"] = rep
            return rows

        return job

    results = _run_cells([make_job(r) for r in range(spec.n_replicates)], worker_count())
    report = ExperimentReport(kind="known-rank", spec=spec)
    for rows in results:
        report.rows.extend(rows)
    return report


def run_misspec_study(
    spec, ranks=tuple(range(1, 9)), methods=("ls", "hb"), schedule=None, save_dir=None
):
    """Fit at a grid of presumed ranks to probe overfitting behavior."""
    schedule = schedule or StudySchedule()
    base = RngStream(spec.seed)

    def make_job(rep):
        def job():
            theta, y = _replicate_data(spec, rep)
            save = _save_dir(save_dir, rep)
            if save is not None:
                np.save(save / "theta.npy", theta.values)
                np.save(save / "y.npy", y.values)
            out = []
            for rank in ranks:
                rows, _ = _fit_cell(
                    theta, y, rank, methods, schedule,
                    base.substream("fit", rep, rank), save=save,
                )
                for r in rows:
                    r["replicate"] = rep
                out.extend(rows)
            return out

        return job

    results = _run_cells([make_job(r) for r in range(spec.n_replicates)], worker_count())
    report = ExperimentReport(kind="misspec", spec=spec)
    for rows in results:
        report.rows.extend(rows)
    return report


def run_rank_selection(spec, ranks=tuple(range(1, 9)), schedule=None, save_dir=None):
    """Pick the rank minimizing DIC on each replicate; tabulate frequencies."""
    schedule = schedule or StudySchedule()
    base = RngStream(spec.seed)

    def make_job(rep):
        def job():
            theta, y = _replicate_data(spec, rep)
            save = _save_dir(save_dir, rep)
            if save is not None:
                np.save(save / "theta.npy", theta.values)
                np.save(save / "y.npy", y.values)
            out = []
            for rank in ranks:
                rows, info = _fit_cell(
                    theta, y, rank, ("hb", "dic"), schedule,
                    base.substream("fit", rep, rank), save=save,
                )
                row = rows[0]
                row.update(replicate=rep, dic=info["dic"], p_eff=info["p_eff"])
                out.append(row)
            best = min(out, key=lambda r: r["dic"])
            for r in out:
                r["selected"] = int(r["rank"] == best["rank"])
            return out

        return job

    results = _run_cells([make_job(r) for r in range(spec.n_replicates)], worker_count())
    report = ExperimentReport(kind="rank-select", spec=spec)
    counts = {r: 0 for r in ranks}
    for rows in results:
        report.rows.extend(rows)
        for r in rows:
            if r["selected"]:
                counts[r["rank"]] += 1
    report.selection = {
        "true_rank": spec.rank,
        "counts": counts,
        "frequencies": {r: c / spec.n_replicates for r, c in counts.items()},
    }
    return report
