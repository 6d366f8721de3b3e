"""Analysis instrumentation: accumulated-gradient histograms, tracked-set
churn, l2 diffusion distance, 3-component PCA of weight trajectories, and
the memory-access/energy estimator.

Everything here reduces optimizer state to numbers and CSV rows; rendering
lives elsewhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DiffusionSample:
    step: int
    l2_from_init: float


@dataclass(frozen=True)
class TrajectorySnapshot:
    step: int
    weights: np.ndarray  # dense vector of all current parameter values


def gradient_histogram(displacements: np.ndarray, bin_edges: np.ndarray) -> np.ndarray:
    """Counts of signed displacement-from-init values per bin.

    Values outside the outer edges are clipped onto them, so the counts
    always sum to the parameter count (untracked weights contribute 0).
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if len(edges) < 2 or not (np.diff(edges) > 0).all():
        raise ValueError("bin edges must be strictly increasing")
    values = np.clip(np.asarray(displacements, dtype=np.float64), edges[0], edges[-1])
    counts, _ = np.histogram(values, bins=edges)
    return counts


def diffusion_distance(opt_state, step: int) -> DiffusionSample:
    """Exact l2 norm of (current - init); optimizers expose it from their state."""
    return DiffusionSample(step, opt_state.l2_from_init())


@dataclass
class PcaResult:
    rows: list  # (run_id, step, c1, c2, c3), runs in input order, steps in order
    components: np.ndarray  # (3, dims) orthonormal basis (zero rows if degenerate)
    explained: np.ndarray  # top-3 eigenvalues of the snapshot covariance (scaled)


def pca_project(runs: list[tuple[str, list[TrajectorySnapshot]]]) -> PcaResult:
    """Fit one 3-component PCA over all runs' snapshots; per-run trajectories
    are translated so each run's first snapshot sits at the origin.

    Works on the T x T Gram matrix of centered snapshots, never forming a
    dims x dims covariance: with X = U S V^T, the Gram matrix is U S^2 U^T,
    scores are U S, and components follow as X^T U / S.
    """
    labeled = [(run_id, snap) for run_id, snaps in runs for snap in snaps]
    if len(labeled) < 4:
        raise ValueError(f"need at least 4 snapshots total, got {len(labeled)}")
    x = np.stack([snap.weights.astype(np.float64) for _, snap in labeled])
    t, dims = x.shape
    centered = x - x.mean(axis=0)
    gram = centered @ centered.T
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1][:3]
    lam = np.maximum(eigvals[order], 0.0)
    u = eigvecs[:, order]

    scale = float(lam[0]) if lam[0] > 0 else 1.0
    scores = np.zeros((t, 3))
    components = np.zeros((3, dims))
    for j in range(3):
        if lam[j] <= 1e-12 * scale:
            continue  # degenerate direction: coordinates stay 0
        s = np.sqrt(lam[j])
        comp = centered.T @ u[:, j] / s
        # deterministic sign: the largest-magnitude loading points positive
        if comp[np.argmax(np.abs(comp))] < 0:
            comp = -comp
            u[:, j] = -u[:, j]
        components[j] = comp
        scores[:, j] = u[:, j] * s

    rows = []
    first_of_run: dict[str, np.ndarray] = {}
    for (run_id, snap), coord in zip(labeled, scores):
        origin = first_of_run.setdefault(run_id, coord)
        c = coord - origin
        rows.append((run_id, snap.step, float(c[0]), float(c[1]), float(c[2])))
    return PcaResult(rows, components, lam)


def write_pca_csv(path, result: PcaResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "step", "c1", "c2", "c3"])
        writer.writerows(result.rows)


@dataclass
class AccessLedger:
    """Monotone counters feeding the energy estimate."""

    dram_weight_reads: int = 0
    dram_weight_writes: int = 0
    regen_events: int = 0
    flop_count: int = 0

    def __add__(self, other: "AccessLedger") -> "AccessLedger":
        return AccessLedger(
            self.dram_weight_reads + other.dram_weight_reads,
            self.dram_weight_writes + other.dram_weight_writes,
            self.regen_events + other.regen_events,
            self.flop_count + other.flop_count,
        )

    def note_train_step(self, tracked: int, untracked: int, batch_rows: int,
                        frozen: bool) -> None:
        """Account one mini-batch training step.

        Tracked weights: one DRAM read for the forward use plus one read and
        one write in the optimizer update. Untracked weights: regenerated
        for the forward use and again for the backward pass while unfrozen;
        after freezing only the forward regeneration remains (untracked
        gradients are skipped). Flops count the network arithmetic: 2 per
        weight per sample forward, 4 more backward for whatever is trained.
        """
        self.dram_weight_reads += 2 * tracked
        self.dram_weight_writes += tracked
        self.regen_events += untracked if frozen else 2 * untracked
        total = tracked + untracked
        trained = tracked if frozen else total
        self.flop_count += batch_rows * (2 * total + 4 * trained)


@dataclass(frozen=True)
class EnergyModel:
    """Per-event energy in picojoules; defaults follow 45nm-process figures."""

    dram_access_pj: float = 640.0
    flop_pj: float = 0.9
    regen_pj: float = 1.5

    def estimate(self, ledger: AccessLedger) -> float:
        return (
            self.dram_access_pj * (ledger.dram_weight_reads + ledger.dram_weight_writes)
            + self.flop_pj * ledger.flop_count
            + self.regen_pj * ledger.regen_events
        )


@dataclass
class MetricWriter:
    """Append-only CSV emitter: header once, then one row per sample."""

    path: Path
    columns: list[str]
    rows: list = field(default_factory=list)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(values)

    def flush(self) -> None:
        with open(self.path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            writer.writerows(self.rows)
