"""Binary run checkpoints.

Layout: 4-byte magic "DBCK", u32 little-endian JSON header length, the JSON
header, then a columnar little-endian payload that depends on the optimizer
kind. Restoring a checkpoint rebuilds float32 state bit-exactly, so
re-evaluating reproduces the recorded validation error.

Payloads:
  dropback   tensor_index u32[n] | flat_offset u64[n] | delta f32[n] | velocity f32[n]
  sgd        disp f32[total] | velocity f32[total]
  magnitude  disp f32[total] | velocity f32[total] | keep u8[total]
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import DenseOptState, MagnitudePruneState
from .network import NetworkSpec, from_dims
from .tracked import TrackedSet

MAGIC = b"DBCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _header_for(state, spec: NetworkSpec, extra: dict | None) -> dict:
    header = {
        "format_version": FORMAT_VERSION,
        "seed": state.seed,
        "network_dims": spec.dims(),
        "network_digest": spec.digest(),
        "step_index": state.step_index,
        "extra": extra or {},
    }
    if isinstance(state, TrackedSet):
        header.update(kind="dropback", capacity_k=state.capacity_k,
                      frozen=state.frozen, entry_count=len(state))
    elif isinstance(state, MagnitudePruneState):
        header.update(kind="magnitude", keep_count=state.keep_count,
                      param_count=spec.layout.total)
    elif isinstance(state, DenseOptState):
        header.update(kind="sgd", param_count=spec.layout.total)
    else:
        raise CheckpointError(f"unsupported state type {type(state).__name__}")
    return header


def _payload_for(state, spec: NetworkSpec) -> bytes:
    if isinstance(state, TrackedSet):
        bases = np.asarray(spec.layout.bases + [spec.layout.total])
        tensor_index = (np.searchsorted(bases, state.gids, side="right") - 1).astype("<u4")
        flat_offset = (state.gids - bases[tensor_index]).astype("<u8")
        return (tensor_index.tobytes() + flat_offset.tobytes()
                + state.delta.astype("<f4").tobytes()
                + state.velocity.astype("<f4").tobytes())
    parts = [state.disp.astype("<f4").tobytes(), state.velocity.astype("<f4").tobytes()]
    if isinstance(state, MagnitudePruneState):
        parts.append(state.keep_mask.astype(np.uint8).tobytes())
    return b"".join(parts)


def save_checkpoint(path, state, spec: NetworkSpec, extra: dict | None = None) -> None:
    header_bytes = json.dumps(_header_for(state, spec, extra), sort_keys=True).encode()
    blob = MAGIC + len(header_bytes).to_bytes(4, "little") + header_bytes + _payload_for(state, spec)
    Path(path).write_bytes(blob)


def read_header(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    header_len = int.from_bytes(raw[4:8], "little")
    if 8 + header_len > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    return json.loads(raw[8 : 8 + header_len])


def load_checkpoint(path):
    """Rebuild the optimizer state; returns (state, header, spec)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    header_len = int.from_bytes(raw[4:8], "little")
    header = json.loads(raw[8 : 8 + header_len])
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {header.get('format_version')}")
    payload = raw[8 + header_len :]
    spec = from_dims([int(d) for d in header["network_dims"]])
    if spec.digest() != header["network_digest"]:
        raise CheckpointError("network digest mismatch")
    seed = int(header["seed"])
    kind = header["kind"]

    if kind == "dropback":
        n = int(header["entry_count"])
        expect = n * (4 + 8 + 4 + 4)
        if len(payload) != expect:
            raise CheckpointError(f"payload is {len(payload)} bytes, expected {expect}")
        state = TrackedSet.for_network(spec, seed, int(header["capacity_k"]))
        tensor_index = np.frombuffer(payload, dtype="<u4", count=n)
        flat_offset = np.frombuffer(payload, dtype="<u8", count=n, offset=4 * n)
        delta = np.frombuffer(payload, dtype="<f4", count=n, offset=12 * n)
        velocity = np.frombuffer(payload, dtype="<f4", count=n, offset=16 * n)
        bases = np.asarray(spec.layout.bases)
        gids = bases[tensor_index] + flat_offset.astype(np.int64)
        order = np.argsort(gids)
        state.gids = gids[order]
        state.delta = delta[order].astype(np.float32)
        state.velocity = velocity[order].astype(np.float32)
        state.frozen = bool(header["frozen"])
        state.step_index = int(header["step_index"])
        return state, header, spec

    total = spec.layout.total
    if kind == "sgd":
        expect = 8 * total
        state = DenseOptState(spec, seed)
    elif kind == "magnitude":
        expect = 9 * total
        state = MagnitudePruneState(spec, seed, int(header["keep_count"]))
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    if len(payload) != expect:
        raise CheckpointError(f"payload is {len(payload)} bytes, expected {expect}")
    state.disp = np.frombuffer(payload, dtype="<f4", count=total).astype(np.float32)
    state.velocity = np.frombuffer(payload, dtype="<f4", count=total, offset=4 * total).astype(np.float32)
    if kind == "magnitude":
        state.keep_mask = np.frombuffer(payload, dtype=np.uint8, offset=8 * total).astype(bool)
    state.step_index = int(header["step_index"])
    return state, header, spec
