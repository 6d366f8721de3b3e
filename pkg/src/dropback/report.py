"""Figure rendering for recorded runs.

Reads the CSV/JSON/snapshot outputs a run leaves behind and writes PNG
figures next to a PCA coordinate CSV. Everything is file-to-file; no
display is ever opened.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .checkpoint import load_checkpoint
from .metrics import TrajectorySnapshot, gradient_histogram, pca_project, write_pca_csv
from .tracked import TrackedSet


def _read_csv_columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows) if rows else np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def _run_label(run_dir: Path, record: dict) -> str:
    k = record["config"].get("k", 0)
    name = record["config"]["optimizer"]
    if name == "dropback" and k:
        name = f"dropback k={k}"
    return f"{run_dir.name} ({name})"


def render_report(run_dirs: list, out_dir) -> list[Path]:
    """Render every figure the recorded runs support; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for d in run_dirs:
        d = Path(d)
        with open(d / "record.json") as fh:
            runs.append((d, json.load(fh)))
    if not runs:
        raise ValueError("report needs at least one run directory")
    written = []

    # convergence: per-epoch train loss and validation error
    fig, (ax_loss, ax_err) = plt.subplots(1, 2, figsize=(11, 4))
    for d, record in runs:
        epochs = np.arange(1, len(record["epoch_val_error"]) + 1)
        label = _run_label(d, record)
        ax_loss.plot(epochs, record["epoch_train_loss"], label=label)
        ax_err.plot(epochs, record["epoch_val_error"], label=label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_loss.set_yscale("log")
    ax_err.set_xlabel("epoch")
    ax_err.set_ylabel("validation error")
    ax_err.legend(fontsize=8)
    fig.tight_layout()
    path = out / "convergence.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    # churn: tracked-set membership turnover per step
    churn_runs = [(d, r) for d, r in runs if r["metrics"].get("churn_csv")
                  and Path(r["metrics"]["churn_csv"]).exists()]
    if churn_runs:
        fig, ax = plt.subplots(figsize=(7, 4))
        for d, record in churn_runs:
            cols = _read_csv_columns(record["metrics"]["churn_csv"])
            if len(cols["step"]):
                ax.plot(cols["step"], cols["churn_fraction"], label=_run_label(d, record), lw=0.7)
        ax.set_xlabel("step")
        ax.set_ylabel("(admitted + evicted) / params")
        ax.set_yscale("log")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out / "churn.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    # diffusion: l2 distance from init over steps
    fig, ax = plt.subplots(figsize=(7, 4))
    any_diffusion = False
    for d, record in runs:
        csv_path = record["metrics"].get("diffusion_csv")
        if not csv_path or not Path(csv_path).exists():
            continue
        cols = _read_csv_columns(csv_path)
        if len(cols["step"]):
            ax.plot(cols["step"], cols["l2_from_init"], label=_run_label(d, record))
            any_diffusion = True
    if any_diffusion:
        ax.set_xlabel("step")
        ax.set_ylabel("l2 distance from init")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out / "diffusion.png"
        fig.savefig(path, dpi=120)
        written.append(path)
    plt.close(fig)

    # accumulated-displacement histogram from each final checkpoint
    fig, ax = plt.subplots(figsize=(7, 4))
    any_hist = False
    for d, record in runs:
        ckpt = record["checkpoints"]["final"]
        if not ckpt or not Path(ckpt).exists():
            continue
        state, _, _ = load_checkpoint(ckpt)
        disp = (state.accumulated_displacements() if isinstance(state, TrackedSet)
                else state.disp)
        lim = max(float(np.abs(disp).max()), 1e-6)
        edges = np.linspace(-lim, lim, 81)
        counts = gradient_histogram(disp, edges)
        centers = (edges[:-1] + edges[1:]) / 2
        ax.plot(centers, counts, label=_run_label(d, record), drawstyle="steps-mid")
        any_hist = True
    if any_hist:
        ax.set_xlabel("accumulated displacement from init")
        ax.set_ylabel("weights per bin")
        ax.set_yscale("log")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out / "histogram.png"
        fig.savefig(path, dpi=120)
        written.append(path)
    plt.close(fig)

    # PCA trajectories from runs that recorded snapshots
    snapshot_runs = []
    for d, record in runs:
        npz_path = record["metrics"].get("snapshots")
        if npz_path and Path(npz_path).exists():
            archive = np.load(npz_path)
            snaps = [TrajectorySnapshot(int(s), w)
                     for s, w in zip(archive["steps"], archive["weights"])]
            snapshot_runs.append((d.name, snaps))
    total_snaps = sum(len(s) for _, s in snapshot_runs)
    if snapshot_runs and total_snaps >= 4:
        result = pca_project(snapshot_runs)
        pca_csv = out / "pca.csv"
        write_pca_csv(pca_csv, result)
        written.append(pca_csv)
        fig = plt.figure(figsize=(7, 6))
        ax = fig.add_subplot(projection="3d")
        for run_id, _ in snapshot_runs:
            rows = [(r[2], r[3], r[4]) for r in result.rows if r[0] == run_id]
            xyz = np.array(rows)
            ax.plot(xyz[:, 0], xyz[:, 1], xyz[:, 2], label=run_id)
            ax.scatter(*xyz[0], marker="o")
        ax.set_xlabel("c1")
        ax.set_ylabel("c2")
        ax.set_zlabel("c3")
        ax.legend(fontsize=8)
        path = out / "pca3d.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written
