"""Unsupervised pretraining: SGD with momentum, step LR decay, patience."""
from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .contrastive import LossConfig, final_loss_node, loss_with_gradients
from .data.augment import temporal_window
from .data.io import Manifest, UnlabeledSample
from .encoders import EncoderConfig, ModalityId, MultimodalModel, ProjectionConfig
from .exceptions import ConfigError, DataError, DegenerateEmbeddingError, NumericalError, ProtocolError
from .numcore import ParamStore, Tape, make_rng

CHECKPOINT_MAGIC = b"MPCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.001
    lr_decay: float = 0.9
    lr_decay_every: int = 100
    max_epochs: int = 2000
    patience: int = 100
    tolerance: float = 1e-6
    seed: int = 0
    window_len: int = 16
    val_fraction: float = 0.1
    val_by_group: bool = False
    # Negative control: re-pair modalities at random every epoch.
    break_pairing: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("need lr >= 0, weight_decay >= 0 and 0 <= momentum < 1")
        if not 0 < self.lr_decay <= 1 or self.lr_decay_every < 1:
            raise ConfigError("need 0 < lr_decay <= 1 and lr_decay_every >= 1")
        if self.max_epochs < 1 or self.patience < 1 or self.patience > self.max_epochs:
            raise ConfigError("need 1 <= patience <= max_epochs")
        if self.window_len < 1 or not 0 <= self.val_fraction < 1:
            raise ConfigError("need window_len >= 1 and 0 <= val_fraction < 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# optimizer, schedule, patience


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParamStore) -> "OptimizerState":
        return cls({name: np.zeros_like(v) for name, v in store.items()})


def sgd_step(store: ParamStore, state: OptimizerState, lr: float, momentum: float = 0.9,
             weight_decay: float = 0.001) -> None:
    """Classical momentum with L2 decay folded into the gradient, in place:
    ``v = momentum*v + (g + weight_decay*w)``; ``w -= lr*v``."""
    for name, w in store.items():
        v = state.velocity.get(name)
        if v is None or v.shape != w.shape:
            raise ProtocolError(f"optimizer state for {name!r} does not match parameter shape {w.shape}")
        g = store.grad(name)
        if weight_decay:
            g = g + weight_decay * w
        v *= momentum
        v += g
        w -= lr * v


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


@dataclass
class PatienceMonitor:
    patience: int = 100
    tolerance: float = 1e-6
    mode: str = "min"
    best: float | None = None
    since: int = 0
    improved: bool = False

    def __post_init__(self):
        if self.mode not in ("min", "max"):
            raise ConfigError(f"monitor mode must be 'min' or 'max', got {self.mode!r}")


def should_stop(monitor: PatienceMonitor, new_val: float) -> tuple[bool, PatienceMonitor]:
    """Feed one validation value; stop once ``patience`` updates pass without
    an improvement larger than ``tolerance``."""
    if monitor.best is None:
        better = True
    elif monitor.mode == "min":
        better = new_val < monitor.best - monitor.tolerance
    else:
        better = new_val > monitor.best + monitor.tolerance
    monitor.improved = better
    if better:
        monitor.best = float(new_val)
        monitor.since = 0
    else:
        monitor.since += 1
    return monitor.since >= monitor.patience, monitor


# ---------------------------------------------------------------------------
# pretraining


@dataclass
class PretrainResult:
    model: MultimodalModel
    log: list
    best_epoch: int
    epochs_run: int
    stopped_early: bool
    train_config: TrainConfig
    loss_config: LossConfig


def as_unlabeled(data) -> list[UnlabeledSample]:
    """Strip everything but ids, groups and streams. The pretraining path only
    ever sees the result of this function."""
    if isinstance(data, Manifest):
        return data.load_unlabeled()
    out = []
    for i, s in enumerate(data):
        if isinstance(s, UnlabeledSample):
            out.append(s)
        elif hasattr(s, "streams"):
            out.append(UnlabeledSample(s.id, getattr(s, "group_id", ""), s.streams))
        else:
            out.append(UnlabeledSample(str(i), "", dict(s)))
    return out


def validation_split(samples, fraction: float, seed: int, by_group: bool = False):
    """Seeded held-out subset. With ``by_group`` whole groups are held out."""
    n = len(samples)
    rng = make_rng(seed, "validation")
    n_val = int(round(fraction * n))
    if n_val < 2 or n - n_val < 2:
        return list(range(n)), []
    if by_group:
        groups = sorted({s.group_id for s in samples})
        if len(groups) < 2:
            raise DataError("group-disjoint validation needs at least 2 groups")
        n_groups = max(1, int(round(fraction * len(groups))))
        held = {groups[i] for i in rng.permutation(len(groups))[:n_groups]}
        val = [i for i, s in enumerate(samples) if s.group_id in held]
    else:
        val = sorted(rng.permutation(n)[:n_val].tolist())
    chosen = set(val)
    return [i for i in range(n) if i not in chosen], val


def _batches(order, batch_size):
    out = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if out and len(out[-1]) < 2:
        out.pop()
    return out


def _eval_batches(n, batch_size):
    out = [list(range(i, min(n, i + batch_size))) for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2].extend(out.pop())
    return out


def _tagged_degenerate(exc, ids):
    rows = exc.rows or []
    bad = [ids[r] for r in rows if r < len(ids)]
    return DegenerateEmbeddingError(f"degenerate embedding for samples {bad}: {exc}", rows, bad)


def batch_loss(model: MultimodalModel, streams: dict, loss_cfg: LossConfig, ids=None, tape=None):
    """Final loss over one batch (``streams``: modality -> list of sequences)."""
    tape = tape or Tape()
    z = {name: model.project(tape, name, model.embed(tape, name, streams[name])) for name in model.names}
    try:
        return tape, final_loss_node(tape, z, loss_cfg)
    except DegenerateEmbeddingError as exc:
        raise _tagged_degenerate(exc, ids or list(range(len(streams[model.names[0]])))) from exc


def evaluate_loss(model, samples, loss_cfg, batch_size) -> float:
    """Mean per-sample final loss on full sequences."""
    total, count = 0.0, 0
    for idx in _eval_batches(len(samples), batch_size):
        z = {}
        for name in model.names:
            f = model.features(name, [samples[i].streams[name] for i in idx])
            tape = Tape()
            z[name] = model.project(tape, name, tape.constant(f)).value
        try:
            value, _ = loss_with_gradients(z, loss_cfg)
        except DegenerateEmbeddingError as exc:
            raise _tagged_degenerate(exc, [samples[i].id for i in idx]) from exc
        total += value
        count += len(idx)
    return total / count


def pretrain(data, encoders: dict, loss_config: LossConfig | None = None,
             train_config: TrainConfig | None = None, projection: ProjectionConfig | None = None,
             modalities=None, timing: bool = True, progress=None) -> PretrainResult:
    """Contrastive pretraining over every ordered modality pair.

    ``data`` is a manifest or a sequence of samples; labels are dropped before
    anything else happens. Returns the best-validation parameters.
    """
    loss_cfg = loss_config or LossConfig()
    cfg = train_config or TrainConfig()
    samples = as_unlabeled(data)
    names = list(modalities) if modalities is not None else list(encoders)
    if len(names) < 2:
        raise ConfigError(f"pretraining needs at least 2 modalities, got {names}")
    for s in samples:
        missing = [n for n in names if n not in s.streams]
        if missing:
            raise DataError(f"sample {s.id!r}: missing modalities {missing}")
    embed_dim = encoders[names[0]].embed_dim
    projection = projection or ProjectionConfig(in_dim=embed_dim)
    model = MultimodalModel.build([ModalityId(i, n) for i, n in enumerate(names)],
                                  {n: encoders[n] for n in names}, projection,
                                  make_rng(cfg.seed, "init"))
    train_idx, val_idx = validation_split(samples, cfg.val_fraction, cfg.seed, cfg.val_by_group)
    train_s = [samples[i] for i in train_idx]
    val_s = [samples[i] for i in val_idx]
    if len(train_s) < 2:
        raise DataError(f"need at least 2 training samples, got {len(train_s)}")

    state = OptimizerState.for_store(model.store)
    monitor = PatienceMonitor(cfg.patience, cfg.tolerance, "min")
    best_state, best_epoch = model.store.state(), 0
    log, stopped = [], False
    epoch = -1
    for epoch in range(cfg.max_epochs):
        started = time.perf_counter()
        lr = lr_at(epoch, cfg)
        rng = make_rng(cfg.seed, "epoch", epoch)
        order = rng.permutation(len(train_s)).tolist()
        partner = {n: order for n in names}
        if cfg.break_pairing:
            for n in names[1:]:
                partner[n] = rng.permutation(len(train_s)).tolist()
        running, seen = 0.0, 0
        for b, idx in enumerate(_batches(list(range(len(order))), cfg.batch_size)):
            streams = {n: [temporal_window(train_s[partner[n][i]].streams[n], cfg.window_len, rng)
                           for i in idx] for n in names}
            ids = [train_s[order[i]].id for i in idx]
            tape, loss = batch_loss(model, streams, loss_cfg, ids)
            value = float(loss.value)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            tape.backward(loss)
            sgd_step(model.store, state, lr, cfg.momentum, cfg.weight_decay)
            model.store.zero_grad()
            running += value
            seen += len(idx)
        train_loss = running / seen
        val_loss = evaluate_loss(model, val_s, loss_cfg, cfg.batch_size) if val_s else None
        watched = val_loss if val_loss is not None else train_loss
        stop, monitor = should_stop(monitor, watched)
        if monitor.improved:
            best_state, best_epoch = model.store.state(), epoch
        record = {"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_loss": val_loss,
                  "seconds": round(time.perf_counter() - started, 6) if timing else None}
        log.append(record)
        if progress is not None:
            progress(record)
        if stop:
            stopped = True
            break
    model.store.load_state(best_state)
    return PretrainResult(model, log, best_epoch, epoch + 1, stopped, cfg, loss_cfg)


# ---------------------------------------------------------------------------
# persistence


def write_log(log, path) -> None:
    with open(path, "w") as fh:
        for rec in log:
            fh.write(json.dumps(rec) + "\n")


def read_log(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def save_checkpoint(path, model: MultimodalModel, train_config: TrainConfig | None = None,
                    loss_config: LossConfig | None = None, extra: dict | None = None) -> None:
    """``MPCK`` container: magic, u32 version, u64 header length, JSON header,
    then every parameter as little-endian float64 in header order."""
    params = [{"name": n, "shape": list(v.shape)} for n, v in model.store.items()]
    header = {
        "version": CHECKPOINT_VERSION,
        "modalities": model.names,
        "encoders": {n: model.encoders[n].to_dict() for n in model.names},
        "projection": model.projection.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "loss_config": loss_config.to_dict() if loss_config else None,
        "seed": train_config.seed if train_config else None,
        "extra": extra or {},
        "params": params,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, v in model.store.items():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(model, header)``."""
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"{path}: checkpoint not found") from None
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    if len(raw) < 16:
        raise DataError(f"{path}: truncated checkpoint header")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16:16 + hlen])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc.msg}") from None
    mods = [ModalityId(i, n) for i, n in enumerate(header["modalities"])]
    encoders = {n: EncoderConfig.from_dict(header["encoders"][n]) for n in header["modalities"]}
    model = MultimodalModel(mods, encoders, ProjectionConfig(**header["projection"]))
    pos = 16 + hlen
    for p in header["params"]:
        count = int(np.prod(p["shape"]))
        end = pos + 8 * count
        if end > len(raw):
            raise DataError(f"{path}: truncated parameter blob {p['name']!r}")
        model.store.add(p["name"], np.frombuffer(raw[pos:end], dtype="<f8").reshape(p["shape"]))
        pos = end
    if pos != len(raw):
        raise DataError(f"{path}: {len(raw) - pos} trailing bytes")
    return model, header
