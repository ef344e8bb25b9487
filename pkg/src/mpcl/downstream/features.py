"""Frozen pre-projection features and their concatenation."""
from __future__ import annotations

import numpy as np

from ..data.io import write_feature_file
from ..encoders import ModalityId, MultimodalModel
from ..exceptions import DataError


def extract_features(model: MultimodalModel, sample) -> dict:
    """Encoder outputs (before the projection head) on full, unwindowed streams."""
    streams = sample.streams if hasattr(sample, "streams") else sample
    out = {}
    for m in model.modalities:
        if m.name not in streams:
            raise DataError(f"sample {getattr(sample, 'id', '?')!r}: missing modality {m.name!r}")
        out[m] = model.features(m.name, [streams[m.name]])[0]
    return out


def extract_batch(model: MultimodalModel, samples, names=None, batch_size: int = 256) -> dict:
    """name -> N x embed_dim matrix over ``samples``."""
    names = names or model.names
    out = {}
    for name in names:
        items = []
        for s in samples:
            streams = s.streams if hasattr(s, "streams") else s
            if name not in streams:
                raise DataError(f"sample {getattr(s, 'id', '?')!r}: missing modality {name!r}")
            items.append(streams[name])
        out[name] = model.features(name, items, batch_size)
    return out


def fuse_concat(features: dict, order=None) -> np.ndarray:
    """Concatenate per-modality features in ascending modality-id order.

    Keys may be :class:`ModalityId` (ordered by index) or names, in which case
    ``order`` gives the canonical name order.
    """
    if not features:
        raise DataError("no features to fuse")
    keys = list(features)
    if all(isinstance(k, ModalityId) for k in keys):
        ordered = sorted(keys, key=lambda k: k.index)
    else:
        if order is None:
            raise DataError("fusing name-keyed features needs an explicit modality order")
        missing = [n for n in order if n not in features]
        if missing:
            raise DataError(f"missing modalities {missing}")
        ordered = list(order)
    parts = [np.asarray(features[k], dtype=np.float64) for k in ordered]
    axis = 0 if parts[0].ndim == 1 else 1
    return np.concatenate(parts, axis=axis)


def write_feature_dump(path, fused) -> None:
    """Fused features as an ``MPFT`` file, one row per sample."""
    write_feature_file(path, np.atleast_2d(fused))
