"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .data.io import Manifest
from .exceptions import DataError, ShapeError


def check_streams(X, modalities=None, dims: dict | None = None) -> list:
    """Normalise multimodal input to a list of ``{modality: T x D float64}``.

    ``X`` may be a :class:`Manifest`, a list of samples (anything with a
    ``streams`` mapping) or a list of plain dicts. Every sample must carry
    the same modalities; ``dims`` pins the expected feature width.
    """
    if isinstance(X, Manifest):
        X = X.load_samples()
    if isinstance(X, dict) or isinstance(X, np.ndarray):
        raise DataError("expected a sequence of samples, one modality mapping each")
    items = [getattr(s, "streams", s) for s in X]
    if not items:
        raise DataError("no samples given")
    names = list(modalities) if modalities is not None else list(items[0])
    out = []
    for i, streams in enumerate(items):
        if not isinstance(streams, dict):
            raise DataError(f"sample {i}: expected a modality -> frames mapping, got {type(streams).__name__}")
        missing = [n for n in names if n not in streams]
        if missing:
            raise DataError(f"sample {i}: missing modalities {missing}")
        row = {}
        for n in names:
            x = np.asarray(streams[n], dtype=np.float64)
            if x.ndim != 2 or x.shape[0] < 1:
                raise ShapeError(f"sample {i}, {n}: expected a non-empty T x D matrix, got shape {x.shape}")
            if not np.all(np.isfinite(x)):
                raise DataError(f"sample {i}, {n}: non-finite frame values")
            if dims is not None and x.shape[1] != dims[n]:
                raise ShapeError(f"sample {i}, {n}: frame dim {x.shape[1]} != {dims[n]}")
            row[n] = x
        out.append(row)
    return out


def stream_dims(samples: list) -> dict:
    dims = {n: x.shape[1] for n, x in samples[0].items()}
    for i, s in enumerate(samples):
        for n, x in s.items():
            if x.shape[1] != dims[n]:
                raise ShapeError(f"sample {i}, {n}: frame dim {x.shape[1]} != {dims[n]} of sample 0")
    return dims


def check_features(F, n_features: int | None = None) -> np.ndarray:
    F = check_array(F, dtype=np.float64)
    if n_features is not None and F.shape[1] != n_features:
        raise ShapeError(f"expected {n_features} features, got {F.shape[1]}")
    return F


def check_targets(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim not in (1, 2) or len(y) != n_samples:
        raise ShapeError(f"labels of shape {y.shape} do not match {n_samples} samples")
    if y.ndim == 2 and not np.isin(y, (0, 1)).all():
        raise DataError("multi-label targets must be 0/1")
    return y
