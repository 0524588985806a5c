"""Write study results as CSV files with matching PNG figures."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .harness import RunArtifacts, StudyReport

STUDY_COLUMNS = ("arm", "seed", "status", "tau", "dz_avg", "dz_max", "bound", "bound_dz_max",
                 "bound_at_boundary", "discrepancy", "error")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_study_csv(study: StudyReport, path) -> None:
    rows = []
    for r in study.reports:
        row = r.as_row()
        rows.append([row["arm"], row["seed"], "ok", row["tau"], row["dz_avg"], row["dz_max"], row["bound"],
                     row["bound_dz_max"], row["bound_at_boundary"], row["discrepancy"], ""])
    for f in study.failures:
        rows.append([f.arm, f.seed, "failed"] + [math.nan] * 4 + ["", math.nan, f.error])
    rows.sort(key=lambda r: (r[1], r[0]))
    _write(Path(path), STUDY_COLUMNS, rows)


def write_medians_csv(study: StudyReport, path) -> None:
    rows = []
    for arm in study.config.arms:
        m = study.medians(arm)
        failed = sum(1 for f in study.failures if f.arm == arm)
        rows.append([arm, m["runs"], failed, m["tau"], m["dz_avg"], m["dz_max"]])
    _write(Path(path), ("arm", "completed", "failed", "median_tau", "median_dz_avg", "median_dz_max"), rows)


def write_trajectory_csv(art: RunArtifacts, path) -> None:
    D = art.reference.shape[1]
    header = ["t"] + [f"z_{i + 1}" for i in range(D)]
    cols = [art.t[:, None], art.reference]
    for arm, pred in art.predictions.items():
        header += [f"{arm}_{i + 1}" for i in range(D)]
        cols.append(pred)
    _write(Path(path), header, np.hstack(cols))


def write_errors_csv(art: RunArtifacts, path) -> None:
    D = art.dz_internal.shape[1]
    header = (["t"] + [f"dz_internal_{i + 1}" for i in range(D)] + [f"dz_external_{i + 1}" for i in range(D)])
    _write(Path(path), header, np.column_stack([art.grid_t, art.dz_internal, art.dz_external]))


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_trajectory(art: RunArtifacts, path, system: str = "") -> None:
    """Phase portrait of the reference against each arm's prediction."""
    plt = _pyplot()
    D = art.reference.shape[1]
    # nl-osc: (x, p); Henon-Heiles: spatial (x, y)
    i, j = (0, 1)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.plot(art.reference[:, i], art.reference[:, j], "k-", lw=2.0, label="reference")
    for arm, pred in art.predictions.items():
        ax.plot(pred[:, i], pred[:, j], "--", lw=1.2, label=arm)
    ax.set_xlabel("x")
    ax.set_ylabel("p" if D == 2 else "y")
    ax.set_title(f"{system} seed {art.seed}")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_errors(art: RunArtifacts, path, system: str = "") -> None:
    """Internal estimate against the reference error, one panel per pair of components."""
    plt = _pyplot()
    D = art.dz_internal.shape[1]
    pairs = [(0, 1)] if D == 2 else [(0, 1), (0, 2), (1, 3)]
    names = ["x", "p"] if D == 2 else ["x", "y", "px", "py"]
    fig, axes = plt.subplots(1, len(pairs), figsize=(4.2 * len(pairs), 4), squeeze=False)
    for ax, (i, j) in zip(axes[0], pairs):
        ax.plot(art.dz_external[:, i], art.dz_external[:, j], "k-", lw=2.0, label="external")
        ax.plot(art.dz_internal[:, i], art.dz_internal[:, j], "r--", lw=1.2, label="internal")
        ax.set_xlabel(f"d{names[i]}")
        ax.set_ylabel(f"d{names[j]}")
    axes[0][0].legend(frameon=False, fontsize=8)
    fig.suptitle(f"{system} seed {art.seed}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_medians(study: StudyReport, path) -> None:
    plt = _pyplot()
    arms = [a for a in study.config.arms if study.by_arm(a)]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
    for ax, key in zip(axes, ("tau", "dz_avg", "dz_max")):
        data = [[getattr(r, key) for r in study.by_arm(a)] for a in arms]
        if data:
            ax.boxplot(data, tick_labels=arms)
        ax.set_yscale("log")
        ax.set_title(key)
    fig.suptitle(f"{study.config.system}: K={study.config.K}, +{study.config.extra_iters} iterations")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_study(study: StudyReport, out_dir, figures: bool = True) -> list[Path]:
    """Emit study.csv, medians.csv and per-run CSVs, plus PNGs when ``figures`` is set."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "study.csv", out / "medians.csv"]
    write_study_csv(study, written[0])
    write_medians_csv(study, written[1])
    system = study.config.system
    for art in study.artifacts:
        path = out / f"trajectory_{art.seed}.csv"
        write_trajectory_csv(art, path)
        written.append(path)
        if figures and art.predictions:
            plot_trajectory(art, out / f"trajectory_{art.seed}.png", system)
            written.append(out / f"trajectory_{art.seed}.png")
        if art.dz_internal is not None:
            path = out / f"errors_{art.seed}.csv"
            write_errors_csv(art, path)
            written.append(path)
            if figures:
                plot_errors(art, out / f"errors_{art.seed}.png", system)
                written.append(out / f"errors_{art.seed}.png")
    if figures and study.reports:
        plot_medians(study, out / "medians.png")
        written.append(out / "medians.png")
    return written
