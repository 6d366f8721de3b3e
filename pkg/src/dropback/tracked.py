"""Bounded tracked-set optimizer.

Only the capacity_k weights with the largest accumulated updates keep any
stored state (signed displacement from init plus a momentum velocity);
every other weight is recomputed from the init generator on access. Each
unfrozen step re-ranks tracked entries against untracked candidates and
keeps the top k, so membership churns until training stabilizes or the
set is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .initgen import InitSpec, ParamId, TensorLayout, init_value, regen_flat
from .network import GradientBuffer, NetworkSpec, NonFiniteGradientError


@dataclass(frozen=True)
class TrackedEntry:
    """One persisted weight: current value = init + delta, key = |delta|."""

    id: ParamId
    delta: float
    velocity: float


@dataclass(frozen=True)
class StepStats:
    step_index: int
    admitted: int
    evicted: int
    lam: float  # the admission/eviction threshold: kth-largest candidate key


class TrackedSet:
    """Columnar store of the tracked entries, sorted by global flat index.

    Persistent training state is exactly the three parallel arrays (id,
    delta, velocity); weight values and the untracked majority are pure
    functions of (seed, index) and are regenerated on every access.
    Implements the ParamView protocol.
    """

    def __init__(self, seed: int, layout: TensorLayout, init_specs: list[InitSpec],
                 capacity_k: int):
        if capacity_k < 1 or capacity_k > layout.total:
            raise ValueError(f"capacity_k must be in [1, {layout.total}], got {capacity_k}")
        if len(init_specs) != len(layout.shapes):
            raise ValueError("one InitSpec per tensor required")
        self.seed = seed
        self.layout = layout
        self.init_specs = init_specs
        self.capacity_k = capacity_k
        self.frozen = False
        self.step_index = 0
        self.gids = np.empty(0, dtype=np.int64)
        self.delta = np.empty(0, dtype=np.float32)
        self.velocity = np.empty(0, dtype=np.float32)

    @classmethod
    def for_network(cls, spec: NetworkSpec, seed: int, capacity_k: int) -> "TrackedSet":
        return cls(seed, spec.layout, [init for _, init in spec.tensors], capacity_k)

    def __len__(self) -> int:
        return len(self.gids)

    # --- ParamView ---

    def value(self, pid: ParamId) -> float:
        g = self.layout.global_index(pid)
        spec = self.init_specs[pid.tensor_index]
        base = np.float32(init_value(self.seed, g, spec))
        pos = np.searchsorted(self.gids, g)
        if pos < len(self.gids) and self.gids[pos] == g:
            return float(base + self.delta[pos])
        return float(base)

    def tensor(self, tensor_index: int) -> np.ndarray:
        base = self.layout.bases[tensor_index]
        size = self.layout.sizes[tensor_index]
        flat = regen_flat(self.seed, base, size, self.init_specs[tensor_index])
        lo = np.searchsorted(self.gids, base)
        hi = np.searchsorted(self.gids, base + size)
        if lo < hi:
            flat[self.gids[lo:hi] - base] += self.delta[lo:hi]
        return flat.reshape(self.layout.shapes[tensor_index])

    def dense_flat(self) -> np.ndarray:
        """Materialize every current weight as one flat float32 vector."""
        parts = [self.tensor(i).reshape(-1) for i in range(len(self.layout.shapes))]
        return np.concatenate(parts)

    # --- training ---

    def step(self, grads, lr: float, momentum_mu: float) -> StepStats:
        """One masked update: rank tracked survivors against new candidates.

        Tracked entries first apply their momentum update; their key is the
        resulting |delta|. Untracked weights bid with |lr*g| (their would-be
        first displacement); zero keys never bid. The k largest keys survive,
        ties broken toward the lowest global index. Evicted entries lose all
        state; admitted ones start at velocity = g, delta = -lr*g, which is
        exactly the dense momentum update from a zero state.
        """
        flat = grads.flat if isinstance(grads, GradientBuffer) else np.asarray(grads)
        if flat.shape != (self.layout.total,):
            raise ValueError(f"gradient length {flat.shape} != {self.layout.total}")
        if not np.isfinite(flat).all():
            self._raise_non_finite(flat)
        self.step_index += 1

        g_tracked = flat[self.gids]
        v_new = momentum_mu * self.velocity + g_tracked
        d_new = self.delta - lr * v_new

        if self.frozen:
            self.velocity = v_new.astype(np.float32, copy=False)
            self.delta = d_new.astype(np.float32, copy=False)
            lam = float(np.abs(self.delta).min()) if len(self.gids) else 0.0
            return StepStats(self.step_index, 0, 0, lam)

        untracked = np.ones(self.layout.total, dtype=bool)
        untracked[self.gids] = False
        u_gids = np.nonzero(untracked)[0]
        u_keys = np.abs(lr * flat[u_gids])
        bidding = u_keys > 0
        u_gids = u_gids[bidding]
        u_keys = u_keys[bidding]

        n_tracked = len(self.gids)
        cand_gids = np.concatenate([self.gids, u_gids])
        cand_keys = np.concatenate([np.abs(d_new), u_keys]).astype(np.float32, copy=False)
        n = len(cand_gids)

        if n <= self.capacity_k:
            keep = np.ones(n, dtype=bool)
            lam = float(cand_keys.min()) if n else 0.0
        else:
            kth = np.partition(cand_keys, n - self.capacity_k)[n - self.capacity_k]
            keep = cand_keys > kth
            slots = self.capacity_k - int(keep.sum())
            at_threshold = np.nonzero(cand_keys == kth)[0]
            chosen = at_threshold[np.argsort(cand_gids[at_threshold])[:slots]]
            keep[chosen] = True
            lam = float(kth)

        keep_tracked = keep[:n_tracked]
        keep_new = keep[n_tracked:]
        admitted_gids = u_gids[keep_new]
        admitted_g = flat[admitted_gids]

        new_gids = np.concatenate([self.gids[keep_tracked], admitted_gids])
        new_delta = np.concatenate([d_new[keep_tracked], -lr * admitted_g]).astype(np.float32, copy=False)
        new_velocity = np.concatenate([v_new[keep_tracked], admitted_g]).astype(np.float32, copy=False)
        order = np.argsort(new_gids)
        self.gids = new_gids[order]
        self.delta = new_delta[order]
        self.velocity = new_velocity[order]

        evicted = n_tracked - int(keep_tracked.sum())
        return StepStats(self.step_index, int(len(admitted_gids)), evicted, lam)

    def _raise_non_finite(self, flat: np.ndarray) -> None:
        bad = int(np.nonzero(~np.isfinite(flat))[0][0])
        raise NonFiniteGradientError(self.layout.param_id(bad).tensor_index)

    def freeze(self) -> None:
        """Fix membership permanently; later steps only update existing entries."""
        self.frozen = True

    # --- inspection ---

    def is_tracked(self, pid: ParamId) -> bool:
        g = self.layout.global_index(pid)
        pos = np.searchsorted(self.gids, g)
        return bool(pos < len(self.gids) and self.gids[pos] == g)

    def entries(self) -> list[TrackedEntry]:
        return [
            TrackedEntry(self.layout.param_id(int(g)), float(d), float(v))
            for g, d, v in zip(self.gids, self.delta, self.velocity)
        ]

    def layer_retention(self) -> list[int]:
        """Tracked-entry count per tensor, summing to len(self)."""
        bases = np.asarray(self.layout.bases + [self.layout.total])
        counts = np.diff(np.searchsorted(self.gids, bases))
        return [int(c) for c in counts]

    def l2_from_init(self) -> float:
        """Distance from init over all weights; untracked terms are zero."""
        return float(np.sqrt(np.sum(self.delta.astype(np.float64) ** 2)))

    def stored_scalars(self) -> int:
        """Persisted trainable scalars: delta and velocity per entry (ids aside)."""
        return 2 * len(self.gids)

    def accumulated_displacements(self) -> np.ndarray:
        """Dense signed displacement-from-init vector (zeros where untracked)."""
        out = np.zeros(self.layout.total, dtype=np.float32)
        out[self.gids] = self.delta
        return out
