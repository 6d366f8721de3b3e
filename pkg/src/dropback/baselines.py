"""Reference optimizers: dense SGD with momentum, and magnitude pruning.

Both store full dense state (they are comparators, not memory-savings
methods). Weights are kept as displacement from the regenerated init and
materialized as init + disp on read, so every floating-point operation in
the update matches the tracked-set optimizer exactly; that shared op
sequence is what makes the full-capacity equivalence bit-exact rather
than merely close.
"""

from __future__ import annotations

import numpy as np

from .initgen import ParamId, regen_flat
from .network import GradientBuffer, NetworkSpec, NonFiniteGradientError


class DenseOptState:
    """Full weight and velocity arrays for plain SGD with momentum."""

    def __init__(self, spec: NetworkSpec, seed: int):
        self.spec = spec
        self.seed = seed
        layout = spec.layout
        parts = [regen_flat(seed, layout.bases[i], layout.sizes[i], init)
                 for i, (_, init) in enumerate(spec.tensors)]
        self.init_flat = np.concatenate(parts)
        self.disp = np.zeros(layout.total, dtype=np.float32)
        self.velocity = np.zeros(layout.total, dtype=np.float32)
        self.step_index = 0

    # --- ParamView ---

    def value(self, pid: ParamId) -> float:
        g = self.spec.layout.global_index(pid)
        return float(self.init_flat[g] + self.disp[g])

    def tensor(self, tensor_index: int) -> np.ndarray:
        layout = self.spec.layout
        base = layout.bases[tensor_index]
        size = layout.sizes[tensor_index]
        flat = self.init_flat[base : base + size] + self.disp[base : base + size]
        return flat.reshape(layout.shapes[tensor_index])

    def dense_flat(self) -> np.ndarray:
        return self.init_flat + self.disp

    # --- training ---

    def _gradient_flat(self, grads) -> np.ndarray:
        flat = grads.flat if isinstance(grads, GradientBuffer) else np.asarray(grads)
        if flat.shape != (self.spec.layout.total,):
            raise ValueError(f"gradient length {flat.shape} != {self.spec.layout.total}")
        if not np.isfinite(flat).all():
            bad = int(np.nonzero(~np.isfinite(flat))[0][0])
            raise NonFiniteGradientError(self.spec.layout.param_id(bad).tensor_index)
        return flat

    def step(self, grads, lr: float, momentum_mu: float) -> None:
        """v <- mu*v + g; w <- w - lr*v over every parameter."""
        g = self._gradient_flat(grads)
        self.step_index += 1
        self.velocity = momentum_mu * self.velocity + g
        self.disp = self.disp - lr * self.velocity

    # --- inspection ---

    def l2_from_init(self) -> float:
        return float(np.sqrt(np.sum(self.disp.astype(np.float64) ** 2)))

    def stored_scalars(self) -> int:
        """Dense methods persist weight and velocity for every parameter."""
        return 2 * self.spec.layout.total

    def accumulated_displacements(self) -> np.ndarray:
        return self.disp.copy()


class MagnitudePruneState(DenseOptState):
    """Dense SGD plus a post-step cut: only the keep_count largest |w| survive.

    Pruned weights are zeroed but keep their velocity, so they can re-enter
    the support later. State stays fully dense; this comparator saves no
    memory.
    """

    def __init__(self, spec: NetworkSpec, seed: int, keep_count: int):
        if not 1 <= keep_count <= spec.layout.total:
            raise ValueError(f"keep_count must be in [1, {spec.layout.total}], got {keep_count}")
        super().__init__(spec, seed)
        self.keep_count = keep_count
        self.keep_mask = np.ones(spec.layout.total, dtype=bool)

    def step(self, grads, lr: float, momentum_mu: float) -> None:
        super().step(grads, lr, momentum_mu)
        total = self.spec.layout.total
        if self.keep_count == total:
            return
        w = self.init_flat + self.disp
        mag = np.abs(w)
        # keep the keep_count largest |w|; ties resolved toward the lowest index
        kth = np.partition(mag, total - self.keep_count)[total - self.keep_count]
        keep = mag > kth
        slots = self.keep_count - int(keep.sum())
        at_threshold = np.nonzero(mag == kth)[0]
        keep[at_threshold[:slots]] = True
        # zero a pruned weight exactly: init + (-init) is +0.0 in IEEE floats
        self.disp[~keep] = -self.init_flat[~keep]
        self.keep_mask = keep

    def support(self) -> np.ndarray:
        """Global indices of the weights kept by the last prune (all, before any step)."""
        return np.nonzero(self.keep_mask)[0]
