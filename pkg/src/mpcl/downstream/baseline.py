"""Supervised late-fusion reference: encoders, concat, fc-ReLU-fc, one label loss.

No contrastive stage. Encoders and head are trained jointly from scratch, with
the same temporal-window augmentation the pretraining loop uses, and evaluated
on full sequences.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..data.augment import temporal_window
from ..encoders import EncoderConfig, encoder_forward, init_params
from ..exceptions import ConfigError, DataError, ShapeError
from ..numcore import ParamStore, Tape, make_rng, stack_ragged
from ..train import OptimizerState, PatienceMonitor, TrainConfig, lr_at, sgd_step, should_stop
from .metrics import MetricsReport, compute_metrics
from .probe import decide, head_forward, infer_task, init_head, label_loss, validation_score


@dataclass
class LateFusion:
    names: list
    encoders: dict
    store: ParamStore
    task: str
    n_classes: int
    threshold: float = 0.5
    history: list = field(default_factory=list)
    best_epoch: int = 0

    def forward(self, tape: Tape, streams: dict):
        parts = []
        for name in self.names:
            x, offsets = stack_ragged(streams[name])
            parts.append(encoder_forward(tape, self.encoders[name], self.store, tape.constant(x), offsets,
                                         f"enc.{name}."))
        return head_forward(tape, self.store, tape.concat_cols(parts), "head.")

    def logits(self, samples, batch_size: int = 256) -> np.ndarray:
        out = []
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            out.append(self.forward(Tape(), _streams(chunk, self.names)).value)
        return np.vstack(out)

    def predict(self, samples) -> np.ndarray:
        return decide(self.logits(samples), self.task, self.threshold)


def _streams(samples, names, window=None, rng=None) -> dict:
    out = {}
    for name in names:
        seqs = []
        for s in samples:
            if name not in s.streams:
                raise DataError(f"sample {s.id!r}: missing modality {name!r}")
            x = s.streams[name]
            seqs.append(temporal_window(x, window, rng) if window else x)
        out[name] = seqs
    return out


def fit_late_fusion(samples, labels, encoders: dict, train_config: TrainConfig | None = None,
                    hidden_dim: int = 512, n_classes: int | None = None, threshold: float = 0.5,
                    names=None) -> LateFusion:
    """Train encoders plus head on labels; patience watches validation accuracy
    (multiclass) or mean w-ACC (multi-label), as for the probe."""
    tc = train_config or TrainConfig(batch_size=64)
    names = list(names or encoders)
    y = np.asarray(labels)
    if len(y) != len(samples):
        raise ShapeError(f"{len(samples)} samples but {len(y)} labels")
    if hidden_dim <= 0:
        raise ConfigError("late-fusion hidden_dim must be positive")
    task = infer_task(y)
    if task == "multiclass":
        y = y.astype(np.int64)
        n_classes = n_classes or int(y.max()) + 1
    else:
        n_classes = y.shape[1]

    rng = make_rng(tc.seed, "late_fusion")
    store = ParamStore()
    for name in names:
        init_params(encoders[name], rng, store, f"enc.{name}.")
    init_head(store, rng, sum(encoders[n].embed_dim for n in names), hidden_dim, n_classes, "head.")
    lf = LateFusion(names, dict(encoders), store, task, n_classes, threshold)

    n_val = int(round(tc.val_fraction * len(samples)))
    perm = rng.permutation(len(samples))
    if n_val >= 1 and len(samples) - n_val >= 2:
        val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    else:
        val_idx, train_idx = np.arange(0), np.arange(len(samples))
    has_val = len(val_idx) > 0
    val_samples = [samples[i] for i in val_idx]

    state = OptimizerState.for_store(store)
    monitor = PatienceMonitor(tc.patience, tc.tolerance, "max" if has_val else "min")
    best = store.state()
    for epoch in range(tc.max_epochs):
        lr = lr_at(epoch, tc)
        order = train_idx[rng.permutation(len(train_idx))]
        running = 0.0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            tape = Tape()
            batch = [samples[i] for i in idx]
            loss = label_loss(tape, lf.forward(tape, _streams(batch, names, tc.window_len, rng)), y[idx], task)
            tape.backward(loss)
            sgd_step(store, state, lr, tc.momentum, tc.weight_decay)
            store.zero_grad()
            running += float(loss.value) * len(idx)
        train_loss = running / len(order)
        watched = (validation_score(lf.predict(val_samples), y[val_idx], task, n_classes)
                   if has_val else train_loss)
        stop, monitor = should_stop(monitor, watched)
        if monitor.improved:
            best, lf.best_epoch = store.state(), epoch
        lf.history.append({"epoch": epoch, "lr": lr, "train_loss": train_loss, "watched": watched})
        if stop:
            break
    store.load_state(best)
    return lf


def late_fusion_baseline(manifest, train_ids, test_ids, encoder: EncoderConfig,
                         train_config: TrainConfig | None = None, hidden_dim: int = 512) -> MetricsReport:
    """Fit on ``train_ids`` of a labeled manifest and score on ``test_ids``."""
    encoders = {m.name: replace(encoder, input_dim=m.dim) for m in manifest.modalities}
    train = manifest.load_samples(train_ids)
    test = manifest.load_samples(test_ids)
    lf = fit_late_fusion(train, manifest.label_array(train_ids), encoders, train_config, hidden_dim,
                         len(manifest.classes), names=manifest.modality_names)
    return compute_metrics(lf.predict(test), manifest.label_array(test_ids), manifest.task, manifest.classes)
