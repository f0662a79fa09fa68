"""Figure rendering for emitted CSV results.

Consumes the delimited output of ``da-run`` and ``spectrum`` and writes
PNG files next to it: quadratic cost along the second-loop iterations,
quadratic cost against the cumulative matrix-vector product count, and
the preconditioned spectra on a log scale.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_STYLE = {
    "figure.figsize": (7.0, 4.5),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 9,
}


def _read_method_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    return rows


def _collect_runs(results_dir):
    runs = {}
    for path in sorted(Path(results_dir).glob("*.csv")):
        if path.name == "spectrum.csv":
            continue
        rows = _read_method_csv(path)
        if rows and "quadratic_cost" in rows[0]:
            runs[rows[0]["method"]] = rows
    return runs


def render_cost_figure(runs, path):
    """Quadratic cost along the final outer loop, per method."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for method, rows in runs.items():
            last_loop = max(int(r["outer_loop"]) for r in rows)
            iters = [
                int(r["inner_iter"]) for r in rows
                if int(r["outer_loop"]) == last_loop
            ]
            costs = [
                float(r["quadratic_cost"]) for r in rows
                if int(r["outer_loop"]) == last_loop
            ]
            ax.semilogy(iters, costs, label=method)
        ax.set_xlabel("inner iteration")
        ax.set_ylabel("quadratic cost")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path


def render_matvec_figure(runs, path):
    """Quadratic cost against total matvecs across both operators."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for method, rows in runs.items():
            work, costs = [], []
            for r in rows:
                m1 = int(r["matvec_A1"]) if r["matvec_A1"] else 0
                m2 = int(r["matvec_A2"]) if r["matvec_A2"] else 0
                work.append(m1 + m2)
                costs.append(float(r["quadratic_cost"]))
            ax.semilogy(work, costs, label=method)
        ax.set_xlabel("cumulative matrix-vector products")
        ax.set_ylabel("quadratic cost")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path


def render_spectrum_figure(csv_path, path):
    """Sorted eigenvalue profiles, one curve per scaling choice."""
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        columns = {h: [] for h in header}
        for row in reader:
            for h, val in zip(header, row):
                if val:
                    columns[h].append(float(val))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for label, vals in columns.items():
            ax.semilogy(range(1, len(vals) + 1), vals, label=label)
        ax.set_xlabel("eigenvalue index")
        ax.set_ylabel("eigenvalue")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path


def render_all(results_dir, outdir):
    """Render every figure the directory's CSVs support; returns paths."""
    results_dir = Path(results_dir)
    outdir = Path(outdir)
    written = []
    runs = _collect_runs(results_dir)
    if runs:
        written.append(render_cost_figure(runs, outdir / "fig_quadratic_cost.png"))
        written.append(render_matvec_figure(runs, outdir / "fig_cost_vs_matvecs.png"))
    spectrum_csv = results_dir / "spectrum.csv"
    if spectrum_csv.is_file():
        written.append(render_spectrum_figure(spectrum_csv, outdir / "fig_spectrum.png"))
    return written
