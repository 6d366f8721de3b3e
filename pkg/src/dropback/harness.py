"""Experiment orchestration: config parsing, lr/freeze scheduling, the
training loop with early stopping, metric wiring, and results persistence.

A run writes into its outdir: record.json (the full run record), epochs.csv,
diffusion.csv, churn.csv (tracked-set runs), optional snapshots.npz, and
best/final checkpoints. Two runs from identical configs produce bit-identical
records and checkpoints, wall time aside.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .baselines import DenseOptState, MagnitudePruneState
from .checkpoint import save_checkpoint
from .data import BatchPlan, Dataset, load_mnist, shuffled_batches, synth_blobs
from .metrics import AccessLedger, EnergyModel, MetricWriter
from .network import ConfigError, NetworkSpec, backward, evaluate, forward, from_dims, loss_softmax_ce
from .tracked import TrackedSet

PATIENCE = 5
DIVERGENCE_FACTOR = 1e3


class DivergenceError(RuntimeError):
    """Training loss went non-finite or exploded; a diagnostic record was written."""


@dataclass
class RunConfig:
    network: str = "mnist_100_100"  # mnist_100_100 | lenet_300_100 | dims:784,100,10
    optimizer: str = "sgd"  # sgd | dropback | magnitude
    k: int = 0  # tracked-set budget (dropback)
    keep_count: int = 0  # magnitude support size, as a count ...
    keep_fraction: float = 0.0  # ... or as a fraction of the parameter count
    lr0: float = 0.4
    lr_schedule: str = "20:0.5,40:0.5,60:0.5,80:0.5"  # epoch:multiplier pairs, or "none"
    momentum_mu: float = 0.9
    freeze_epoch: int = -1  # tracked set frozen after this many epochs; -1 = never
    epochs: int = 100
    batch_size: int = 64
    seed: int = 1
    dataset: str = "synth:classes=3,dims=6,per_class=200,spread=0.08"
    snapshot_every: int = 0  # batches between trajectory snapshots; 0 = off
    diffusion_every: int = 100  # batches between diffusion samples
    outdir: str = "runs/run"

    def schedule(self) -> list[tuple[int, float]]:
        return parse_schedule(self.lr_schedule)


def parse_schedule(text: str) -> list[tuple[int, float]]:
    text = text.strip()
    if text in ("", "none"):
        return []
    pairs = []
    for item in text.split(","):
        epoch_s, _, mult_s = item.partition(":")
        try:
            pairs.append((int(epoch_s), float(mult_s)))
        except ValueError:
            raise ConfigError(f"bad lr_schedule entry {item!r}; want epoch:multiplier")
    if any(m <= 0 for _, m in pairs):
        raise ConfigError("lr_schedule multipliers must be positive")
    return sorted(pairs)


def lr_at(schedule: list[tuple[int, float]], lr0: float, epoch: int) -> float:
    """lr0 times every multiplier whose epoch has been reached."""
    lr = lr0
    for at_epoch, mult in schedule:
        if at_epoch <= epoch:
            lr *= mult
    return lr


def parse_config_text(text: str) -> RunConfig:
    """Flat key=value lines; # starts a comment; unknown keys are rejected."""
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw_line!r}")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = value
    config = RunConfig()
    for key, value in values.items():
        current = getattr(config, key)
        try:
            if isinstance(current, bool):
                setattr(config, key, value.lower() in ("1", "true", "yes"))
            elif isinstance(current, int):
                setattr(config, key, int(value))
            elif isinstance(current, float):
                setattr(config, key, float(value))
            else:
                setattr(config, key, value)
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {value!r}")
    return config


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def network_for(config: RunConfig) -> NetworkSpec:
    name = config.network.strip()
    if name == "mnist_100_100":
        return from_dims([784, 100, 100, 10])
    if name == "lenet_300_100":
        return from_dims([784, 300, 100, 10])
    if name.startswith("dims:"):
        try:
            dims = [int(d) for d in name[len("dims:"):].split(",")]
        except ValueError:
            raise ConfigError(f"bad network dims in {name!r}")
        return from_dims(dims)
    raise ConfigError(f"unknown network {config.network!r}")


def _parse_kv_spec(body: str, defaults: dict) -> dict:
    out = dict(defaults)
    if body:
        for item in body.split(","):
            key, eq, value = item.partition("=")
            key = key.strip()
            if not eq or key not in out:
                raise ConfigError(f"bad dataset option {item!r}")
            try:
                out[key] = type(defaults[key])(value)
            except ValueError:
                raise ConfigError(f"bad dataset option value {item!r}")
    return out


def resolve_dataset(config: RunConfig) -> dict[str, Dataset]:
    """Materialize train/val(/test) splits from the config's dataset string."""
    spec = config.dataset.strip()
    if spec.startswith("mnist:"):
        return load_mnist(spec[len("mnist:"):])
    if spec.startswith("synth:"):
        opts = _parse_kv_spec(spec[len("synth:"):],
                              {"classes": 3, "dims": 6, "per_class": 200, "spread": 0.08})
        full = synth_blobs(config.seed, opts["classes"], opts["dims"],
                           opts["per_class"], opts["spread"])
        # stratified 80/20 split: per class block, first 80% train, rest val
        train_idx, val_idx = [], []
        per = opts["per_class"]
        cut = max(1, (per * 4) // 5)
        for c in range(opts["classes"]):
            base = c * per
            train_idx.extend(range(base, base + cut))
            val_idx.extend(range(base + cut, base + per))
        if not val_idx:
            raise ConfigError("synth dataset too small to split; raise per_class")
        return {"train": full.subset(np.array(train_idx)),
                "val": full.subset(np.array(val_idx))}
    raise ConfigError(f"dataset must be mnist:<dir> or synth:<opts>, got {spec!r}")


def make_optimizer(config: RunConfig, spec: NetworkSpec):
    total = spec.layout.total
    if config.optimizer == "sgd":
        return DenseOptState(spec, config.seed)
    if config.optimizer == "dropback":
        if not 1 <= config.k <= total:
            raise ConfigError(f"dropback needs k in [1, {total}], got {config.k}")
        return TrackedSet.for_network(spec, config.seed, config.k)
    if config.optimizer == "magnitude":
        if config.keep_count and config.keep_fraction:
            raise ConfigError("give keep_count or keep_fraction, not both")
        count = config.keep_count or int(round(config.keep_fraction * total))
        if not 1 <= count <= total:
            raise ConfigError(f"magnitude support must be in [1, {total}], got {count}")
        return MagnitudePruneState(spec, config.seed, count)
    raise ConfigError(f"unknown optimizer {config.optimizer!r}")


def validate_config(config: RunConfig, spec: NetworkSpec) -> None:
    if config.epochs < 0:
        raise ConfigError("epochs must be >= 0")
    if config.batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if not 0 <= config.momentum_mu < 1:
        raise ConfigError("momentum_mu must be in [0, 1)")
    if config.lr0 <= 0:
        raise ConfigError("lr0 must be positive")
    if config.freeze_epoch > config.epochs:
        raise ConfigError("freeze_epoch must be <= epochs (or -1 for never)")
    if config.freeze_epoch >= 0 and config.optimizer != "dropback":
        raise ConfigError("freeze_epoch only applies to the dropback optimizer")
    if config.snapshot_every < 0 or config.diffusion_every < 1:
        raise ConfigError("snapshot_every must be >= 0 and diffusion_every >= 1")
    config.schedule()  # raises on malformed text


def _tracked_untracked(opt, total: int) -> tuple[int, int, bool]:
    if isinstance(opt, TrackedSet):
        return len(opt), total - len(opt), opt.frozen
    return total, 0, False


def train_run(config: RunConfig) -> dict:
    """Execute one full training run and persist its record; returns the record."""
    started = time.monotonic()
    spec = network_for(config)
    validate_config(config, spec)
    splits = resolve_dataset(config)
    train, val = splits["train"], splits["val"]
    if train.features.shape[1] != spec.in_dim:
        raise ConfigError(f"dataset dim {train.features.shape[1]} != network in_dim {spec.in_dim}")
    if train.num_classes > spec.num_classes:
        raise ConfigError(f"dataset has {train.num_classes} classes, network outputs {spec.num_classes}")

    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    opt = make_optimizer(config, spec)
    total = spec.layout.total
    is_tracked_run = isinstance(opt, TrackedSet)

    epochs_csv = MetricWriter(outdir / "epochs.csv",
                              ["epoch", "train_loss", "val_error", "lr", "tracked_count"])
    diffusion_csv = MetricWriter(outdir / "diffusion.csv", ["step", "l2_from_init"])
    churn_csv = MetricWriter(outdir / "churn.csv",
                             ["step", "admitted", "evicted", "lam", "churn_fraction"])
    ledger = AccessLedger()
    energy_model = EnergyModel()
    snapshots: list[tuple[int, np.ndarray]] = []

    if config.batch_size > len(train):
        raise ConfigError(f"batch_size {config.batch_size} exceeds {len(train)} training samples")
    schedule = config.schedule()
    batch_size = config.batch_size
    global_step = 0
    diffusion_csv.add(0, 0.0)
    if config.snapshot_every:
        snapshots.append((0, opt.dense_flat().copy()))

    record: dict = {"config": asdict(config), "status": "ok",
                    "param_count": total, "patience": PATIENCE}
    record["val_error_untrained"] = evaluate(spec, opt, val.features, val.labels)

    def finish(status: str, diagnostic: str | None = None) -> dict:
        epochs_csv.flush()
        diffusion_csv.flush()
        if is_tracked_run:
            churn_csv.flush()
        if config.snapshot_every and snapshots:
            np.savez(outdir / "snapshots.npz",
                     steps=np.array([s for s, _ in snapshots], dtype=np.int64),
                     weights=np.stack([w for _, w in snapshots]))
        save_checkpoint(outdir / "final.ckpt", opt, spec,
                        extra={"epoch": len(epoch_val), "val_error": epoch_val[-1] if epoch_val else None})
        record["status"] = status
        if diagnostic:
            record["diagnostic"] = diagnostic
        record["epochs_run"] = len(epoch_val)
        record["epoch_train_loss"] = epoch_loss
        record["epoch_val_error"] = epoch_val
        record["epoch_lr"] = epoch_lr
        if epoch_val:
            best_err = min(epoch_val)
            record["best_epoch"] = epoch_val.index(best_err) + 1
            record["best_val_error"] = best_err
        else:
            record["best_epoch"] = 0
            record["best_val_error"] = record["val_error_untrained"]
        record["final_tracked_count"] = len(opt) if is_tracked_run else total
        record["stored_trainable_scalars"] = opt.stored_scalars()
        record["stored_weights"] = (opt.capacity_k if is_tracked_run
                                    else getattr(opt, "keep_count", total))
        record["frozen"] = opt.frozen if is_tracked_run else False
        record["metrics"] = {
            "epochs_csv": str(outdir / "epochs.csv"),
            "diffusion_csv": str(outdir / "diffusion.csv"),
            "churn_csv": str(outdir / "churn.csv") if is_tracked_run else None,
            "snapshots": str(outdir / "snapshots.npz") if snapshots else None,
        }
        record["checkpoints"] = {
            "best": str(outdir / "best.ckpt") if epoch_val else None,
            "final": str(outdir / "final.ckpt"),
        }
        record["energy"] = {"ledger": asdict(ledger), "model": asdict(energy_model),
                            "picojoules": energy_model.estimate(ledger)}
        record["wall_time_s"] = time.monotonic() - started
        with open(outdir / "record.json", "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
        return record

    epoch_loss: list[float] = []
    epoch_val: list[float] = []
    epoch_lr: list[float] = []
    best_val = np.inf
    since_improve = 0
    initial_loss = None

    for epoch in range(1, config.epochs + 1):
        if is_tracked_run and 0 <= config.freeze_epoch <= epoch - 1 and not opt.frozen:
            opt.freeze()
        lr = lr_at(schedule, config.lr0, epoch - 1)
        loss_sum, sample_count = 0.0, 0
        for x, y in shuffled_batches(train, BatchPlan(batch_size, config.seed, epoch)):
            logits, cache = forward(spec, opt, x)
            loss, dlogits = loss_softmax_ce(logits, y)
            if initial_loss is None:
                initial_loss = max(loss, 1e-12)
            if not np.isfinite(loss) or loss > DIVERGENCE_FACTOR * initial_loss:
                finish("diverged", f"loss {loss} at step {global_step + 1} "
                                   f"(initial {initial_loss})")
                raise DivergenceError(f"run diverged at step {global_step + 1}: loss {loss}")
            grads = backward(spec, opt, cache, dlogits)
            stats = opt.step(grads, lr, config.momentum_mu)
            global_step += 1
            loss_sum += loss * len(y)
            sample_count += len(y)
            tracked, untracked, frozen = _tracked_untracked(opt, total)
            ledger.note_train_step(tracked, untracked, len(y), frozen)
            if is_tracked_run:
                churn_csv.add(global_step, stats.admitted, stats.evicted, stats.lam,
                              (stats.admitted + stats.evicted) / total)
            if global_step % config.diffusion_every == 0:
                diffusion_csv.add(global_step, opt.l2_from_init())
            if config.snapshot_every and global_step % config.snapshot_every == 0:
                snapshots.append((global_step, opt.dense_flat().copy()))
        epoch_loss.append(loss_sum / sample_count)
        epoch_val.append(evaluate(spec, opt, val.features, val.labels))
        epoch_lr.append(lr)
        epochs_csv.add(epoch, epoch_loss[-1], epoch_val[-1], lr,
                       len(opt) if is_tracked_run else total)
        if epoch_val[-1] < best_val:
            best_val = epoch_val[-1]
            since_improve = 0
            save_checkpoint(outdir / "best.ckpt", opt, spec,
                            extra={"epoch": epoch, "val_error": best_val})
        else:
            since_improve += 1
        if since_improve >= PATIENCE:
            break

    return finish("ok")


def load_record(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def compare_runs(records: list[dict]) -> tuple[list[dict], str]:
    """One row per run: error, weight reduction, best/freeze epochs.

    Reduction is param_count/stored_weights, so dense baselines report 1x.
    Rows are sorted by descending stored-weight count.
    """
    if not records:
        raise ConfigError("compare needs at least one record")
    rows = []
    for record in records:
        config = record["config"]
        stored = record["stored_weights"]
        rows.append({
            "run": Path(config["outdir"]).name,
            "optimizer": config["optimizer"],
            "val_error": record["best_val_error"],
            "stored_weights": stored,
            "weight_reduction": record["param_count"] / stored,
            "best_epoch": record["best_epoch"],
            "freeze_epoch": config["freeze_epoch"] if config["freeze_epoch"] >= 0 else None,
        })
    rows.sort(key=lambda r: -r["stored_weights"])
    header = f"{'run':<24} {'optimizer':<10} {'val_error':>10} {'reduction':>10} {'best_epoch':>10} {'freeze':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        freeze = "-" if r["freeze_epoch"] is None else str(r["freeze_epoch"])
        lines.append(f"{r['run']:<24} {r['optimizer']:<10} {r['val_error']:>10.4f} "
                     f"{r['weight_reduction']:>9.2f}x {r['best_epoch']:>10} {freeze:>7}")
    return rows, "\n".join(lines)


def write_compare_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "optimizer", "val_error", "stored_weights",
                         "weight_reduction", "best_epoch", "freeze_epoch"])
        for r in rows:
            writer.writerow([r["run"], r["optimizer"], r["val_error"], r["stored_weights"],
                             r["weight_reduction"], r["best_epoch"],
                             "" if r["freeze_epoch"] is None else r["freeze_epoch"]])
