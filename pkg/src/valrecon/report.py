"""Report files: delimited tables, plot-data files, a gnuplot script and
(when matplotlib is installed) PNG renderings of the same figures.

Every text file starts with a ``#`` provenance line so reruns can be traced
to a configuration; CSV readers should skip comment lines.
"""

from __future__ import annotations

import csv
import logging
import os

import numpy as np

from .evaluate import SweepReport

log = logging.getLogger(__name__)


def _num(v):
    return "nan" if not np.isfinite(v) else repr(float(v))


def _open(path, provenance):
    fh = open(path, "w", newline="")
    fh.write(f"# {provenance}\n")
    return fh, csv.writer(fh, lineterminator="\n")


def write_sweep_csv(report: SweepReport, path, provenance):
    """One row per strategy, weight and producer."""
    fh, wr = _open(path, provenance)
    with fh:
        wr.writerow(["strategy", "w", "producer", "ap", "ap_independent", "ap_change",
                     "ap_change_pct", "status"])
        for r in report.results:
            pct = r.ap_change_pct
            for i in range(len(r.ap_independent)):
                wr.writerow([r.strategy, repr(float(r.w)), i + 1, _num(r.ap[i]), _num(r.ap_independent[i]),
                             _num(r.ap_change[i]), _num(pct[i]), r.status])


def write_rmse_csv(report: SweepReport, path, provenance):
    fh, wr = _open(path, provenance)
    with fh:
        wr.writerow(["strategy", "w", "rmse", "unit_cost_rate", "status"])
        for r in report.results:
            wr.writerow([r.strategy, repr(float(r.w)), _num(r.rmse), _num(r.unit_cost_rate), r.status])


def write_training_csv(report, m, path, provenance):
    """Per-epoch trace of a value-oriented training run."""
    fh, wr = _open(path, provenance)
    with fh:
        wr.writerow(report.header(m))
        for row in report.rows:
            wr.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def write_table(rows, header, path, provenance):
    fh, wr = _open(path, provenance)
    with fh:
        wr.writerow(header)
        for row in rows:
            wr.writerow([_num(v) if isinstance(v, float) else v for v in row])


def plot_series(report: SweepReport, strategy):
    """``(w, change)`` for one strategy; ``change`` is ``(len(w), m)``."""
    rows = sorted((r for r in report.results if r.strategy == strategy), key=lambda r: r.w)
    w = np.array([r.w for r in rows])
    return w, np.array([r.ap_change for r in rows])


def write_plot_data(report: SweepReport, out_dir, provenance):
    """One whitespace-delimited file per strategy: ``w`` then one column per
    producer of average-profit change over independent offering."""
    paths = {}
    for s in report.strategies:
        if s == "independent":
            continue
        w, change = plot_series(report, s)
        path = os.path.join(out_dir, f"plot_{s}.dat")
        with open(path, "w") as fh:
            fh.write(f"# {provenance}\n")
            fh.write("# w " + " ".join(f"producer_{i + 1}" for i in range(change.shape[1])) + "\n")
            for k in range(len(w)):
                fh.write(" ".join([repr(float(w[k]))] + [_num(v) for v in change[k]]) + "\n")
        paths[s] = path
    return paths


def write_gnuplot_script(data_paths, m, out_dir, provenance):
    lines = [f"# {provenance}", "set terminal pngcairo size 800,500",
             "set xlabel 'allocation weight w'", "set ylabel 'AP change over independent'",
             "set key outside right", "set grid"]
    for s, path in data_paths.items():
        name = os.path.basename(path)
        lines.append(f"set output 'gnuplot_{s}.png'")
        lines.append(f"set title '{s}'")
        plots = [f"'{name}' using 1:{i + 2} with linespoints title 'producer {i + 1}'" for i in range(m)]
        lines.append("plot " + ", \\\n     ".join(plots))
    path = os.path.join(out_dir, "plots.gp")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def render_png(report: SweepReport, out_dir):
    """Render each strategy's figure with matplotlib; returns the written
    paths, or an empty list when matplotlib is not installed."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.info("matplotlib not installed; skipping PNG figures")
        return []
    paths = []
    for s in report.strategies:
        if s == "independent":
            continue
        w, change = plot_series(report, s)
        fig, ax = plt.subplots(figsize=(6, 3.6))
        for i in range(change.shape[1]):
            ax.plot(w, change[:, i], marker="o", label=f"producer {i + 1}")
        ax.axhline(0.0, color="k", lw=0.6)
        ax.set_xlabel("allocation weight w")
        ax.set_ylabel("AP change over independent")
        ax.set_title(s)
        ax.grid(True, alpha=0.4)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, f"plot_{s}.png")
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths


def write_sweep_report(report: SweepReport, out_dir, provenance, m, png=True):
    """All files for one sweep. Returns the list of written paths."""
    os.makedirs(out_dir, exist_ok=True)
    sweep = os.path.join(out_dir, "sweep.csv")
    rmse = os.path.join(out_dir, "rmse.csv")
    write_sweep_csv(report, sweep, provenance)
    write_rmse_csv(report, rmse, provenance)
    data = write_plot_data(report, out_dir, provenance)
    script = write_gnuplot_script(data, m, out_dir, provenance)
    written = [sweep, rmse, *data.values(), script]
    if png:
        written += render_png(report, out_dir)
    return written
