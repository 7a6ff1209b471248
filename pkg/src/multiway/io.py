"""File formats: long-format arrays, cross-classified CSV, dyadic panel
CSV, chain traces, and study reports.

All on-disk index columns are 1-based; in-memory indices are 0-based.
Malformed input raises :class:`DataFormatError` carrying the offending
line number.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .arrays import MultiwayArray
from .means import CrossTabData
from .probit import OrdinalPanel

__all__ = [
    "DataFormatError",
    "read_long",
    "write_long",
    "read_crosstab",
    "write_crosstab",
    "read_panel",
    "write_panel",
    "save_chain",
    "write_report",
    "verify_report",
]


class DataFormatError(ValueError):
    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc += str(path)
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


def read_long(path):
    """Read a long-format array file: header ``# dims: m1,...,mK`` then one
    ``i_1,...,i_K,value`` line per observed cell (1-based indices).  Cells
    absent from the file are masked."""
    path = Path(path)
    dims = None
    values = None
    seen = None
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.lower().startswith("dims:"):
                    try:
                        dims = tuple(
                            int(tok) for tok in body[5:].strip().split(",") if tok
                        )
                    except ValueError:
                        raise DataFormatError("unparseable dims header", path, ln)
                    if len(dims) < 2 or min(dims) < 1:
                        raise DataFormatError(f"bad dims {dims}", path, ln)
                    values = np.zeros(dims)
                    seen = np.zeros(dims, dtype=bool)
                continue
            if dims is None:
                raise DataFormatError("data before '# dims:' header", path, ln)
            parts = line.split(",")
            if len(parts) != len(dims) + 1:
                raise DataFormatError(
                    f"expected {len(dims)} indices + value, got {len(parts)} fields",
                    path,
                    ln,
                )
            try:
                idx = tuple(int(tok) - 1 for tok in parts[:-1])
                val = float(parts[-1])
            except ValueError:
                raise DataFormatError(f"unparseable line {line!r}", path, ln)
            if any(i < 0 or i >= m for i, m in zip(idx, dims)):
                raise DataFormatError(f"index {tuple(i + 1 for i in idx)} out of range", path, ln)
            if seen[idx]:
                raise DataFormatError(f"duplicate cell {tuple(i + 1 for i in idx)}", path, ln)
            seen[idx] = True
            values[idx] = val
    if dims is None:
        raise DataFormatError("missing '# dims:' header", path)
    mask = ~seen
    return MultiwayArray(values, mask=mask if mask.any() else None)


def write_long(a, path):
    """Write a MultiwayArray in long format (observed cells only)."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("# dims: " + ",".join(str(m) for m in a.dims) + "\n")
        for idx in np.ndindex(*a.dims):
            if a.mask is not None and a.mask[idx]:
                continue
            fh.write(
                ",".join(str(i + 1) for i in idx) + f",{float(a.values[idx])!r}\n"
            )


def _read_csv_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [(ln, row) for ln, row in enumerate(reader, start=1) if row]
    if not rows:
        raise DataFormatError("empty file", path)
    return rows


def read_crosstab(path):
    """Read a cross-classified CSV with header ``x1,...,xK,y1,...,yp``.

    Level codes are 1-based in the file.
    """
    path = Path(path)
    rows = _read_csv_rows(path)
    ln0, header = rows[0]
    names = [h.strip() for h in header]
    k = sum(1 for h in names if h.startswith("x"))
    p = sum(1 for h in names if h.startswith("y"))
    if k == 0 or p == 0 or k + p != len(names):
        raise DataFormatError(
            f"header must be x1..xK,y1..yp, got {names}", path, ln0
        )
    xs, ys = [], []
    for ln, row in rows[1:]:
        if len(row) != k + p:
            raise DataFormatError(f"expected {k + p} fields, got {len(row)}", path, ln)
        try:
            xs.append([int(tok) - 1 for tok in row[:k]])
            ys.append([float(tok) for tok in row[k:]])
        except ValueError:
            raise DataFormatError(f"unparseable row {row!r}", path, ln)
        if min(xs[-1]) < 0:
            raise DataFormatError("level codes must be >= 1", path, ln)
    if not xs:
        raise DataFormatError("no data rows", path)
    return CrossTabData(np.asarray(ys), np.asarray(xs))


def write_crosstab(data, path):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [f"x{k+1}" for k in range(data.n_modes)]
            + [f"y{d+1}" for d in range(data.p)]
        )
        for xr, yr in zip(data.x, data.y):
            w.writerow([int(v) + 1 for v in xr] + [repr(float(v)) for v in yr])


def read_panel(path):
    """Read a dyadic panel CSV with header ``i,j,t,y,x1,...,xq``.

    Node and time indices are 1-based in the file; ``i < j`` is enforced.
    Category labels are kept as stored (they may be negative).
    """
    path = Path(path)
    rows = _read_csv_rows(path)
    ln0, header = rows[0]
    names = [h.strip() for h in header]
    if names[:4] != ["i", "j", "t", "y"]:
        raise DataFormatError(f"header must start i,j,t,y got {names[:4]}", path, ln0)
    q = len(names) - 4
    ii, jj, tt, yy, xx = [], [], [], [], []
    for ln, row in rows[1:]:
        if len(row) != 4 + q:
            raise DataFormatError(f"expected {4 + q} fields, got {len(row)}", path, ln)
        try:
            i, j, t, y = int(row[0]) - 1, int(row[1]) - 1, int(row[2]) - 1, int(row[3])
            x = [float(tok) for tok in row[4:]]
        except ValueError:
            raise DataFormatError(f"unparseable row {row!r}", path, ln)
        if i >= j:
            raise DataFormatError(f"need i < j, got i={i + 1}, j={j + 1}", path, ln)
        if i < 0 or t < 0:
            raise DataFormatError("indices must be >= 1", path, ln)
        ii.append(i)
        jj.append(j)
        tt.append(t)
        yy.append(y)
        xx.append(x)
    if not ii:
        raise DataFormatError("no data rows", path)
    try:
        return OrdinalPanel(ii, jj, tt, yy, np.asarray(xx))
    except ValueError as e:
        raise DataFormatError(str(e), path)


def write_panel(panel, path):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "t", "y"] + [f"x{d+1}" for d in range(panel.n_covariates)])
        for r in range(panel.n_obs):
            w.writerow(
                [panel.i[r] + 1, panel.j[r] + 1, panel.t[r] + 1, panel.labels[panel.y[r]]]
                + [repr(float(v)) for v in panel.x[r]]
            )


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def save_chain(chain, outdir):
    """Write chain metadata (JSON), scalar traces (CSV), and the posterior
    mean array (long format)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    meta = {
        "dims": list(chain.dims),
        "rank": chain.rank,
        "mode": chain.mode,
        "n_burn": chain.n_burn,
        "n_iter": chain.n_iter,
        "thin": chain.thin,
        "count": chain.count,
        "prior": dataclasses.asdict(chain.prior) if chain.prior else None,
        "trace_columns": ["iteration", "sigma2", "theta_norm2", "neg2loglik"],
    }
    _write_json(meta, outdir / "chain_meta.json")
    cols = chain.trace_columns()
    with open(outdir / "traces.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols.keys())
        for row in zip(*cols.values()):
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    from .gibbs import posterior_theta

    write_long(posterior_theta(chain), outdir / "theta_mean.txt")


_REPORT_FILES = {
    "known-rank": "known_rank.csv",
    "misspec": "misspec.csv",
    "rank-select": "rank_select.csv",
}


def write_report(report, outdir):
    """Write a study report as CSV rows plus a JSON metadata sidecar."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fname = _REPORT_FILES[report.kind]
    cols = ["replicate", "method", "rank", "mse_ratio", "rss_ratio"]
    if report.kind == "rank-select":
        cols += ["dic", "p_eff", "selected"]
    with open(outdir / fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in sorted(
            report.rows, key=lambda r: (r["replicate"], r["rank"], r["method"])
        ):
            w.writerow([row[c] for c in cols])
    meta = {
        "kind": report.kind,
        "spec": dataclasses.asdict(report.spec),
        "csv": fname,
    }
    if report.selection is not None:
        meta["selection"] = {
            "true_rank": report.selection["true_rank"],
            "counts": {str(k): v for k, v in report.selection["counts"].items()},
            "frequencies": {
                str(k): v for k, v in report.selection["frequencies"].items()
            },
        }
        with open(outdir / "rank_select_table.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "count", "frequency"])
            for r, c in report.selection["counts"].items():
                w.writerow([r, c, report.selection["frequencies"][r]])
    _write_json(meta, outdir / fname.replace(".csv", ".meta.json"))
    return outdir / fname


def _read_report_rows(outdir):
    outdir = Path(outdir)
    for kind, fname in _REPORT_FILES.items():
        f = outdir / fname
        if f.exists():
            with open(f, newline="") as fh:
                rows = list(csv.DictReader(fh))
            return kind, rows
    raise DataFormatError("no report CSV found", outdir)


def verify_report(outdir, tol=1e-9):
    """Recompute report ratios from the saved arrays and diff them.

    Returns (ok, messages); requires the study to have been run with
    array saving enabled.
    """
    outdir = Path(outdir)
    kind, rows = _read_report_rows(outdir)
    problems = []
    checked = 0
    for row in rows:
        rep = int(row["replicate"])
        d = outdir / "arrays" / f"rep{rep:03d}"
        hat_file = d / f"thetahat_{row['method']}_rank{row['rank']}.npy"
        if not hat_file.exists():
            problems.append(f"missing array artifact {hat_file}")
            continue
        theta = np.load(d / "theta.npy")
        y = np.load(d / "y.npy")
        hat = np.load(hat_file)
        mse = float(np.sum((hat - theta) ** 2) / np.sum((y - theta) ** 2))
        rss = float(np.sum((y - hat) ** 2) / np.sum(y**2))
        if abs(mse - float(row["mse_ratio"])) > tol * max(1.0, abs(mse)):
            problems.append(
                f"rep {rep} {row['method']} rank {row['rank']}: mse {row['mse_ratio']} != {mse}"
            )
        if abs(rss - float(row["rss_ratio"])) > tol * max(1.0, abs(rss)):
            problems.append(
                f"rep {rep} {row['method']} rank {row['rank']}: rss {row['rss_ratio']} != {rss}"
            )
        checked += 1
    if checked == 0 and not problems:
        problems.append("no rows could be verified")
    return (not problems), problems
