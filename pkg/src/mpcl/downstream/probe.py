"""fc-ReLU-fc prediction head trained on frozen features."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from ..encoders import glorot_uniform
from ..exceptions import ConfigError, ShapeError
from ..numcore import ParamStore, Tape, make_rng, sigmoid
from ..train import OptimizerState, PatienceMonitor, TrainConfig, lr_at, sgd_step, should_stop
from .metrics import compute_metrics


def default_probe_train() -> TrainConfig:
    return TrainConfig(batch_size=64, max_epochs=2000, patience=100)


@dataclass
class ProbeConfig:
    hidden_dim: int = 512  # 0 gives a purely linear head
    loss: str = "auto"  # auto | cross_entropy | binary_cross_entropy
    threshold: float = 0.5
    standardize: bool = True
    train: TrainConfig = field(default_factory=default_probe_train)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_dict(self.train)
        if not 0 < self.threshold < 1:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.loss not in ("auto", "cross_entropy", "binary_cross_entropy"):
            raise ConfigError(f"unknown probe loss {self.loss!r}")
        if self.hidden_dim < 0:
            raise ConfigError("probe hidden_dim must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class Probe:
    store: ParamStore
    task: str
    n_classes: int
    threshold: float
    mean: np.ndarray
    scale: np.ndarray
    history: list = field(default_factory=list)
    best_epoch: int = 0

    def logits(self, features) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.mean.shape[1]:
            raise ShapeError(f"probe expects {self.mean.shape[1]} features, got {x.shape[1]}")
        tape = Tape()
        return head_forward(tape, self.store, tape.constant((x - self.mean) / self.scale)).value


def head_forward(tape: Tape, store: ParamStore, x, prefix: str = ""):
    if f"{prefix}fc1.weight" not in store:
        return tape.linear(x, tape.param(store, f"{prefix}fc2.weight"), tape.param(store, f"{prefix}fc2.bias"))
    h = tape.relu(tape.linear(x, tape.param(store, f"{prefix}fc1.weight"), tape.param(store, f"{prefix}fc1.bias")))
    return tape.linear(h, tape.param(store, f"{prefix}fc2.weight"), tape.param(store, f"{prefix}fc2.bias"))


def init_head(store: ParamStore, rng, in_dim: int, hidden: int, out_dim: int, prefix: str = "") -> None:
    if hidden == 0:
        store.add(f"{prefix}fc2.weight", glorot_uniform(rng, in_dim, out_dim))
        store.add(f"{prefix}fc2.bias", np.zeros((1, out_dim)))
        return
    store.add(f"{prefix}fc1.weight", glorot_uniform(rng, in_dim, hidden))
    store.add(f"{prefix}fc1.bias", np.zeros((1, hidden)))
    store.add(f"{prefix}fc2.weight", glorot_uniform(rng, hidden, out_dim))
    store.add(f"{prefix}fc2.bias", np.zeros((1, out_dim)))


def infer_task(labels) -> str:
    return "multilabel" if np.ndim(labels) == 2 else "multiclass"


def label_loss(tape, logits, labels, task):
    if task == "multiclass":
        return tape.softmax_cross_entropy(logits, labels)
    return tape.sigmoid_binary_cross_entropy(logits, labels)


def decide(logits: np.ndarray, task: str, threshold: float = 0.5) -> np.ndarray:
    """argmax for multiclass; per-class ``sigmoid >= threshold`` for multilabel."""
    logits = np.atleast_2d(logits)
    if task == "multiclass":
        return np.argmax(logits, axis=1)
    return (sigmoid(logits) >= threshold).astype(np.int64)


def validation_score(pred, labels, task, n_classes) -> float:
    """Accuracy (multiclass) or mean w-ACC (multilabel) on a validation split."""
    if task == "multiclass":
        return float(np.mean(pred == labels))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = compute_metrics(pred, labels, "multilabel", n_classes=n_classes)
    return report.overall["wacc"] if report.overall["wacc"] is not None else 0.0


def _split(n, fraction, rng):
    n_val = int(round(fraction * n))
    if n_val < 1 or n - n_val < 2:
        return np.arange(n), np.arange(0)
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_probe(features, labels, cfg: ProbeConfig | None = None, n_classes: int | None = None) -> Probe:
    """Fit the head with SGD; early stopping watches the validation score."""
    cfg = cfg or ProbeConfig()
    tc = cfg.train
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(y):
        raise ShapeError(f"features {x.shape} and labels {y.shape} do not line up")
    task = infer_task(y)
    if cfg.loss == "cross_entropy" and task != "multiclass" or cfg.loss == "binary_cross_entropy" and task != "multilabel":
        raise ConfigError(f"probe loss {cfg.loss!r} does not fit {task} labels")
    if task == "multiclass":
        y = y.astype(np.int64)
        n_classes = n_classes or int(y.max()) + 1
        absent = sorted(set(range(n_classes)) - set(y.tolist()))
    else:
        n_classes = y.shape[1]
        absent = [c for c in range(n_classes) if not y[:, c].any()]
    if absent:
        warnings.warn(f"classes {absent} never occur in the probe training labels", stacklevel=2)

    rng = make_rng(tc.seed, "probe")
    train_idx, val_idx = _split(len(x), tc.val_fraction, rng)
    if cfg.standardize:
        mean = x[train_idx].mean(axis=0, keepdims=True)
        scale = x[train_idx].std(axis=0, keepdims=True)
        scale[scale < 1e-12] = 1.0
    else:
        mean, scale = np.zeros((1, x.shape[1])), np.ones((1, x.shape[1]))
    xs = (x - mean) / scale

    store = ParamStore()
    init_head(store, rng, x.shape[1], cfg.hidden_dim, n_classes)
    probe = Probe(store, task, n_classes, cfg.threshold, mean, scale)
    state = OptimizerState.for_store(store)
    has_val = len(val_idx) > 0
    monitor = PatienceMonitor(tc.patience, tc.tolerance, "max" if has_val else "min")
    best = store.state()
    for epoch in range(tc.max_epochs):
        lr = lr_at(epoch, tc)
        order = train_idx[rng.permutation(len(train_idx))]
        running = 0.0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            tape = Tape()
            loss = label_loss(tape, head_forward(tape, store, tape.constant(xs[idx])), y[idx], task)
            tape.backward(loss)
            sgd_step(store, state, lr, tc.momentum, tc.weight_decay)
            store.zero_grad()
            running += float(loss.value) * len(idx)
        train_loss = running / len(order)
        if has_val:
            pred = decide(head_forward(Tape(), store, Tape().constant(xs[val_idx])).value, task, cfg.threshold)
            watched = validation_score(pred, y[val_idx], task, n_classes)
        else:
            watched = train_loss
        stop, monitor = should_stop(monitor, watched)
        if monitor.improved:
            best, probe.best_epoch = store.state(), epoch
        probe.history.append({"epoch": epoch, "lr": lr, "train_loss": train_loss,
                              "val_score" if has_val else "watched_loss": watched})
        if stop:
            break
    store.load_state(best)
    return probe


def predict(probe: Probe, fused) -> np.ndarray:
    return decide(probe.logits(fused), probe.task, probe.threshold)
