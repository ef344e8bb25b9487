"""scikit-learn style wrappers around the pipeline stages.

``ContrastivePretrainer`` is an unsupervised transformer: ``fit`` ignores
``y`` and ``transform`` returns the fused frozen features. ``ProbeClassifier``
fits the prediction head on those features. ``LateFusionClassifier`` is the
supervised end-to-end reference.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .contrastive import LossConfig
from .data.io import Sample
from .downstream.baseline import fit_late_fusion
from .downstream.probe import ProbeConfig, decide, train_probe
from .encoders import EncoderConfig, ProjectionConfig
from .exceptions import ConfigError
from .numcore import sigmoid, softmax_rows
from .train import TrainConfig, pretrain
from .validation import check_features, check_streams, check_targets, stream_dims


def _as_samples(streams: list) -> list:
    return [Sample(str(i), "", None, s) for i, s in enumerate(streams)]


class ContrastivePretrainer(TransformerMixin, BaseEstimator):
    """Label-free pretraining; ``transform`` yields concatenated embeddings."""

    def __init__(self, kind="mlp", embed_dim=512, hidden_dim=512, channels=64, kernel_width=3,
                 dilations=(1, 2, 4), causal=True, residual=True, model_dim=64, heads=4, ff_dim=128,
                 projection_hidden=512, projection_dim=256, temperature=0.07,
                 include_positive_in_denominator=False, batch_size=32, lr=0.001, momentum=0.9,
                 weight_decay=0.001, lr_decay=0.9, lr_decay_every=100, max_epochs=2000, patience=100,
                 window_len=16, val_fraction=0.1, break_pairing=False, modalities=None, random_state=0):
        self.kind = kind
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.channels = channels
        self.kernel_width = kernel_width
        self.dilations = dilations
        self.causal = causal
        self.residual = residual
        self.model_dim = model_dim
        self.heads = heads
        self.ff_dim = ff_dim
        self.projection_hidden = projection_hidden
        self.projection_dim = projection_dim
        self.temperature = temperature
        self.include_positive_in_denominator = include_positive_in_denominator
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.max_epochs = max_epochs
        self.patience = patience
        self.window_len = window_len
        self.val_fraction = val_fraction
        self.break_pairing = break_pairing
        self.modalities = modalities
        self.random_state = random_state

    def _configs(self, dims):
        enc = {n: EncoderConfig(self.kind, d, self.embed_dim, self.hidden_dim, self.channels,
                                self.kernel_width, tuple(self.dilations), self.causal, self.residual,
                                self.model_dim, self.heads, self.ff_dim) for n, d in dims.items()}
        proj = ProjectionConfig(self.embed_dim, self.projection_hidden, self.projection_dim)
        loss = LossConfig(self.temperature, self.include_positive_in_denominator)
        train = TrainConfig(self.batch_size, self.lr, self.momentum, self.weight_decay, self.lr_decay,
                            self.lr_decay_every, self.max_epochs, min(self.patience, self.max_epochs),
                            seed=int(self.random_state), window_len=self.window_len,
                            val_fraction=self.val_fraction, break_pairing=self.break_pairing)
        return enc, proj, loss, train

    def fit(self, X, y=None):
        samples = check_streams(X, self.modalities)
        dims = stream_dims(samples)
        enc, proj, loss, train = self._configs(dims)
        result = pretrain(_as_samples(samples), enc, loss, train, proj, modalities=list(dims), timing=False)
        self.model_ = result.model
        self.log_ = result.log
        self.best_epoch_ = result.best_epoch
        self.modalities_ = list(dims)
        self.dims_ = dims
        self.n_features_out_ = len(dims) * self.embed_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        samples = check_streams(X, self.modalities_, self.dims_)
        parts = [self.model_.features(n, [s[n] for s in samples]) for n in self.modalities_]
        return np.hstack(parts)

    def transform_modality(self, X, name):
        """Embeddings of a single modality."""
        check_is_fitted(self, "model_")
        if name not in self.modalities_:
            raise ConfigError(f"unknown modality {name!r}; fitted on {self.modalities_}")
        samples = check_streams(X, [name], {name: self.dims_[name]})
        return self.model_.features(name, [s[name] for s in samples])

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "model_")
        return np.array([f"{n}_{j}" for n in self.modalities_ for j in range(self.embed_dim)], dtype=object)


def _encode_targets(y):
    """Multiclass labels -> (indices, classes_); multi-label passes through."""
    if y.ndim == 2:
        return y.astype(np.int64), np.arange(y.shape[1])
    classes, idx = np.unique(y, return_inverse=True)
    return idx.astype(np.int64), classes


class ProbeClassifier(ClassifierMixin, BaseEstimator):
    """fc-ReLU-fc head (``hidden_dim=0``: linear) on frozen features."""

    def __init__(self, hidden_dim=512, threshold=0.5, standardize=True, batch_size=64, lr=0.001,
                 momentum=0.9, weight_decay=0.001, lr_decay=0.9, lr_decay_every=100, max_epochs=2000,
                 patience=100, val_fraction=0.1, random_state=0):
        self.hidden_dim = hidden_dim
        self.threshold = threshold
        self.standardize = standardize
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.random_state = random_state

    def fit(self, X, y):
        F = check_features(X)
        y = check_targets(y, len(F))
        target, self.classes_ = _encode_targets(y)
        train = TrainConfig(self.batch_size, self.lr, self.momentum, self.weight_decay, self.lr_decay,
                            self.lr_decay_every, self.max_epochs, min(self.patience, self.max_epochs),
                            seed=int(self.random_state), val_fraction=self.val_fraction)
        cfg = ProbeConfig(self.hidden_dim, "auto", self.threshold, self.standardize, train)
        self.probe_ = train_probe(F, target, cfg, n_classes=len(self.classes_))
        self.n_features_in_ = F.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "probe_")
        return self.probe_.logits(check_features(X, self.n_features_in_))

    def predict_proba(self, X):
        logits = self.decision_function(X)
        if self.probe_.task == "multiclass":
            return softmax_rows(logits)
        return sigmoid(logits)

    def predict(self, X):
        out = decide(self.decision_function(X), self.probe_.task, self.threshold)
        return self.classes_[out] if self.probe_.task == "multiclass" else out


class LateFusionClassifier(ClassifierMixin, BaseEstimator):
    """Encoders + concat + fc-ReLU-fc trained jointly on labels."""

    def __init__(self, kind="mlp", embed_dim=512, hidden_dim=512, channels=64, kernel_width=3,
                 dilations=(1, 2, 4), causal=True, residual=True, model_dim=64, heads=4, ff_dim=128,
                 head_hidden=512, threshold=0.5, batch_size=64, lr=0.001, momentum=0.9,
                 weight_decay=0.001, lr_decay=0.9, lr_decay_every=100, max_epochs=2000, patience=100,
                 window_len=16, val_fraction=0.1, modalities=None, random_state=0):
        self.kind = kind
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.channels = channels
        self.kernel_width = kernel_width
        self.dilations = dilations
        self.causal = causal
        self.residual = residual
        self.model_dim = model_dim
        self.heads = heads
        self.ff_dim = ff_dim
        self.head_hidden = head_hidden
        self.threshold = threshold
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.max_epochs = max_epochs
        self.patience = patience
        self.window_len = window_len
        self.val_fraction = val_fraction
        self.modalities = modalities
        self.random_state = random_state

    def fit(self, X, y):
        samples = check_streams(X, self.modalities)
        dims = stream_dims(samples)
        y = check_targets(y, len(samples))
        target, self.classes_ = _encode_targets(y)
        enc = {n: EncoderConfig(self.kind, d, self.embed_dim, self.hidden_dim, self.channels,
                                self.kernel_width, tuple(self.dilations), self.causal, self.residual,
                                self.model_dim, self.heads, self.ff_dim) for n, d in dims.items()}
        train = TrainConfig(self.batch_size, self.lr, self.momentum, self.weight_decay, self.lr_decay,
                            self.lr_decay_every, self.max_epochs, min(self.patience, self.max_epochs),
                            seed=int(self.random_state), window_len=self.window_len,
                            val_fraction=self.val_fraction)
        self.model_ = fit_late_fusion(_as_samples(samples), target, enc, train, self.head_hidden,
                                      len(self.classes_), self.threshold, list(dims))
        self.modalities_ = list(dims)
        self.dims_ = dims
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        samples = check_streams(X, self.modalities_, self.dims_)
        return self.model_.logits(_as_samples(samples))

    def predict(self, X):
        out = decide(self.decision_function(X), self.model_.task, self.threshold)
        return self.classes_[out] if self.model_.task == "multiclass" else out
