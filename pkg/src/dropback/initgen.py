"""Deterministic, stateless regeneration of initialization values.

Every initial parameter value is a pure function of (seed, flat parameter
index): the index is mixed into a nonzero xorshift32 state, the stream is
whitened into two uniforms, and Box-Muller maps those to a normal variate.
Nothing is stored; any weight's initial value can be recomputed at every
access, scalar or in bulk, with bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

MASK32 = 0xFFFFFFFF
# 2**32 / golden ratio; odd, so multiplication by it is a bijection mod 2**32
GOLDEN_MIX = 0x9E3779B9


def xorshift32(state: int) -> int:
    """One Marsaglia 13/17/5 xorshift step on a nonzero 32-bit state."""
    assert state != 0, "xorshift32 state must be nonzero (0 is its fixed point)"
    x = state & MASK32
    x ^= (x << 13) & MASK32
    x ^= x >> 17
    x ^= (x << 5) & MASK32
    return x


def derive_state(seed: int, global_index: int) -> int:
    """Nonzero xorshift32 state for one (seed, flat parameter index) pair."""
    s = (seed ^ (GOLDEN_MIX * (global_index + 1))) & MASK32
    return s if s != 0 else GOLDEN_MIX


def _xorshift32_array(x: np.ndarray) -> np.ndarray:
    x = x ^ ((x << np.uint32(13)) & np.uint32(MASK32))
    x = x ^ (x >> np.uint32(17))
    x = x ^ ((x << np.uint32(5)) & np.uint32(MASK32))
    return x


def _states(seed: int, start: int, count: int) -> np.ndarray:
    g = np.arange(start, start + count, dtype=np.uint64).astype(np.uint32)
    s = np.uint32(seed & MASK32) ^ (np.uint32(GOLDEN_MIX) * (g + np.uint32(1)))
    s[s == 0] = np.uint32(GOLDEN_MIX)
    return s


def unit_normals(seed: int, start: int, count: int) -> np.ndarray:
    """Standard-normal variate for each flat index in [start, start+count).

    Three xorshift steps whiten the keyed state into the first uniform's
    bits, one more step yields the second; (bits + 0.5) / 2**32 keeps both
    uniforms strictly inside (0, 1) so the Box-Muller log never sees 0.
    """
    s = _xorshift32_array(_xorshift32_array(_xorshift32_array(_states(seed, start, count))))
    u1 = (s.astype(np.float64) + 0.5) / 2.0**32
    s = _xorshift32_array(s)
    u2 = (s.astype(np.float64) + 0.5) / 2.0**32
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class InitKind(Enum):
    SCALED_NORMAL = "scaled_normal"
    CONSTANT = "constant"


@dataclass(frozen=True)
class InitSpec:
    """Per-tensor initialization rule: seeded scaled normal, or a constant."""

    kind: InitKind
    sigma: float = 0.0
    constant_value: float = 0.0
    fan_in: int = 0

    @staticmethod
    def scaled_normal(fan_in: int) -> "InitSpec":
        if fan_in <= 0:
            raise ValueError(f"fan_in must be positive, got {fan_in}")
        return InitSpec(InitKind.SCALED_NORMAL, sigma=1.0 / math.sqrt(fan_in), fan_in=fan_in)

    @staticmethod
    def constant(value: float) -> "InitSpec":
        return InitSpec(InitKind.CONSTANT, constant_value=value)

    def to_dict(self) -> dict:
        if self.kind is InitKind.CONSTANT:
            return {"kind": self.kind.value, "constant_value": self.constant_value}
        return {"kind": self.kind.value, "sigma": self.sigma, "fan_in": self.fan_in}

    @staticmethod
    def from_dict(d: dict) -> "InitSpec":
        kind = InitKind(d["kind"])
        if kind is InitKind.CONSTANT:
            return InitSpec(kind, constant_value=float(d["constant_value"]))
        return InitSpec(kind, sigma=float(d["sigma"]), fan_in=int(d["fan_in"]))


@dataclass(frozen=True, order=True)
class ParamId:
    """One scalar parameter: (tensor index, row-major offset within it)."""

    tensor_index: int
    flat_offset: int


class TensorLayout:
    """Fixed global flat indexing over an ordered list of tensor shapes.

    The global index of a parameter is the sum of all earlier tensors'
    sizes plus its own row-major offset. This enumeration must never
    change once runs have been recorded.
    """

    def __init__(self, shapes: Iterable[Sequence[int]]):
        self.shapes: list[tuple[int, ...]] = [tuple(int(d) for d in s) for s in shapes]
        for shape in self.shapes:
            if not shape or any(d <= 0 for d in shape):
                raise ValueError(f"tensor shapes must be non-empty and positive, got {shape}")
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.bases = [0] * len(self.sizes)
        for i in range(1, len(self.sizes)):
            self.bases[i] = self.bases[i - 1] + self.sizes[i - 1]
        self.total = sum(self.sizes)

    def __len__(self) -> int:
        return len(self.shapes)

    def global_index(self, pid: ParamId) -> int:
        if not 0 <= pid.tensor_index < len(self.shapes):
            raise IndexError(f"tensor_index {pid.tensor_index} out of range")
        if not 0 <= pid.flat_offset < self.sizes[pid.tensor_index]:
            raise IndexError(f"flat_offset {pid.flat_offset} out of range for tensor {pid.tensor_index}")
        return self.bases[pid.tensor_index] + pid.flat_offset

    def param_id(self, global_index: int) -> ParamId:
        if not 0 <= global_index < self.total:
            raise IndexError(f"global index {global_index} out of range")
        for t in range(len(self.shapes) - 1, -1, -1):
            if global_index >= self.bases[t]:
                return ParamId(t, global_index - self.bases[t])
        raise AssertionError("unreachable")


def init_value(seed: int, global_index: int, spec: InitSpec) -> float:
    """Initial value of one parameter, at 32-bit precision."""
    if spec.kind is InitKind.CONSTANT:
        return float(np.float32(spec.constant_value))
    z = unit_normals(seed, global_index, 1)[0]
    return float(np.float32(spec.sigma * z))


def regen_flat(seed: int, start: int, count: int, spec: InitSpec) -> np.ndarray:
    """Regenerate `count` consecutive initial values starting at a flat index."""
    if spec.kind is InitKind.CONSTANT:
        return np.full(count, np.float32(spec.constant_value), dtype=np.float32)
    z = unit_normals(seed, start, count)
    return (spec.sigma * z).astype(np.float32)


def regen_tensor(seed: int, base_index: int, shape: Sequence[int], spec: InitSpec) -> np.ndarray:
    """Dense initial tensor whose flat element o is init_value at base_index + o."""
    shape = tuple(shape)
    if not shape:
        raise ValueError("shape must be non-empty")
    return regen_flat(seed, base_index, int(np.prod(shape)), spec).reshape(shape)
