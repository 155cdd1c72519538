"""CSV, summary and plot-data writers.

Floats are written with 17 significant digits so that identical runs give
byte-identical files.
"""

import csv
import os

import numpy as np

REPORT_COLUMNS = ("scenario", "theorem", "t", "F", "dF_analytic", "dF_fd", "d2F_fd", "lhs", "rhs", "margin", "status")
SUMMARY_COLUMNS = ("scenario", "check", "t", "worst_margin", "status", "detail")


def fmt(value):
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def safe_name(name):
    return name.replace("#", "__").replace("/", "_")


def report_rows(variant, rep):
    status = rep.status()
    for k, t in enumerate(rep.t_grid):
        yield (variant, rep.theorem, t, rep.F[k], rep.dF_analytic[k], rep.dF_fd[k], rep.d2F_fd[k],
               rep.lhs[k], rep.rhs[k], rep.margin[k], status[k])


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_result(result, out_dir, plot_data=False):
    """Write the per-scenario files; return the list of paths."""
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, safe_name(result.name))
    paths = []
    if result.mode == "transport":
        rows = [row for variant, rep in result.reports for row in report_rows(variant, rep)]
        _write(base + ".csv", REPORT_COLUMNS, rows)
    else:
        _write(base + ".csv", result.table_header, result.table)
    paths.append(base + ".csv")
    _write(base + ".diag.csv", ("scenario", "key", "value"), result.diagnostics)
    paths.append(base + ".diag.csv")
    if plot_data:
        for variant, rep in result.reports:
            path = os.path.join(out_dir, f"{safe_name(variant)}__{rep.theorem}.dat")
            with open(path, "w") as fh:
                fh.write("# t F dF_analytic dF_fd d2F_fd lhs rhs margin\n")
                for k, t in enumerate(rep.t_grid):
                    vals = (t, rep.F[k], rep.dF_analytic[k], rep.dF_fd[k], rep.d2F_fd[k],
                            rep.lhs[k], rep.rhs[k], rep.margin[k])
                    fh.write(" ".join(fmt(float(v)) for v in vals) + "\n")
            paths.append(path)
    return paths


def write_summary(results, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "summary.csv")
    rows = [(c.scenario, c.check, c.t, c.margin, c.status, c.detail) for r in results for c in r.checks]
    _write(path, SUMMARY_COLUMNS, rows)
    return path
