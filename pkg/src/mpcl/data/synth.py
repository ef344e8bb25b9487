"""Synthetic multimodal recordings with a known shared latent.

Each sample draws a latent vector around its class mean; every modality
observes that same latent through its own fixed linear map, plus per-frame
noise. Frame counts are drawn independently per modality, so modalities are
aligned in content but not in length.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError
from .io import Manifest, ModalitySpec, Sample, SampleRecord, StreamRef, write_feature_file, write_manifest

DEFAULT_MODALITIES = (("text", 32), ("audio", 32), ("faces", 32), ("landmarks", 32))


@dataclass
class SyntheticSpec:
    classes: int = 4
    per_class: int = 128
    latent_dim: int = 8
    modalities: tuple = DEFAULT_MODALITIES[:3]
    frames: tuple = (8, 32)
    sigma_obs: float = 1.0
    sigma_class: float = 0.5
    class_scale: float = 1.0
    groups: int = 24
    task: str = "multiclass"
    label_rate: float = 0.3  # multilabel: per-class presence probability
    mean_layout: str = "gaussian"  # gaussian | orthogonal
    map_layout: str = "gaussian"  # gaussian | orthogonal (equal signal power per modality)
    name: str = "synthetic"

    def __post_init__(self):
        self.modalities = tuple((str(n), int(d)) for n, d in self.modalities)
        self.frames = tuple(int(t) for t in self.frames)
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.sigma_obs < 0 or self.sigma_class < 0:
            raise ConfigError("noise levels must be non-negative")
        if len(self.modalities) < 1 or len({n for n, _ in self.modalities}) != len(self.modalities):
            raise ConfigError("modality names must be unique and non-empty")
        lo, hi = self.frames
        if not 1 <= lo <= hi:
            raise ConfigError(f"frame range must satisfy 1 <= T_min <= T_max, got {self.frames}")
        if self.task not in ("multiclass", "multilabel"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.mean_layout not in ("gaussian", "orthogonal"):
            raise ConfigError(f"unknown mean_layout {self.mean_layout!r}")
        if self.map_layout not in ("gaussian", "orthogonal"):
            raise ConfigError(f"unknown map_layout {self.map_layout!r}")
        if self.map_layout == "orthogonal" and any(d < self.latent_dim for _, d in self.modalities):
            raise ConfigError("orthogonal maps need every modality dim >= latent_dim")
        if self.mean_layout == "orthogonal" and self.latent_dim < self.classes:
            raise ConfigError("orthogonal class means need latent_dim >= classes")
        if self.per_class < 1 or self.groups < 1 or self.latent_dim < 1:
            raise ConfigError("per_class, groups and latent_dim must be positive")

    @classmethod
    def with_modalities(cls, count: int, dim: int = 32, **kw) -> "SyntheticSpec":
        names = [n for n, _ in DEFAULT_MODALITIES] + [f"mod{i}" for i in range(len(DEFAULT_MODALITIES), count)]
        return cls(modalities=tuple((n, dim) for n in names[:count]), **kw)

    def to_dict(self):
        d = asdict(self)
        d["modalities"] = [list(m) for m in self.modalities]
        d["frames"] = list(self.frames)
        return d


@dataclass
class SyntheticData:
    samples: list
    latents: np.ndarray
    class_means: np.ndarray
    maps: dict = field(default_factory=dict)


def generate_samples(spec: SyntheticSpec, rng) -> SyntheticData:
    """Draw the dataset in memory. Frames are rounded through float32 so they
    equal what a round trip through feature files returns."""
    c, h_dim = spec.classes, spec.latent_dim
    if spec.mean_layout == "gaussian":
        means = spec.class_scale * rng.standard_normal((c, h_dim))
    else:
        # random orthonormal directions: every pair of class means is equally far apart
        q, _ = np.linalg.qr(rng.standard_normal((h_dim, c)))
        means = spec.class_scale * q.T
    maps = {}
    for name, dim in spec.modalities:
        a = rng.standard_normal((dim, h_dim))
        if spec.map_layout == "orthogonal":
            # same total power as the gaussian map on average, but identical singular values
            a = np.linalg.qr(a)[0] * np.sqrt(dim)
        maps[name] = a / np.sqrt(h_dim)
    n = c * spec.per_class
    if spec.task == "multiclass":
        order = rng.permutation(np.repeat(np.arange(c), spec.per_class))
        labels = [int(y) for y in order]
        centers = means[order]
    else:
        present = rng.random((n, c)) < spec.label_rate
        empty = ~present.any(axis=1)
        present[empty, rng.integers(0, c, size=empty.sum())] = True
        labels = [row.astype(int).tolist() for row in present]
        centers = (present @ means) / present.sum(axis=1, keepdims=True)
    latents = centers + spec.sigma_class * rng.standard_normal((n, h_dim))
    width = len(str(n - 1))
    samples = []
    lo, hi = spec.frames
    for i in range(n):
        streams = {}
        for name, dim in spec.modalities:
            t = int(rng.integers(lo, hi + 1))
            frames = latents[i] @ maps[name].T + spec.sigma_obs * rng.standard_normal((t, dim))
            streams[name] = frames.astype(np.float32).astype(np.float64)
        samples.append(Sample(f"s{i:0{width}d}", f"actor{i % spec.groups:02d}", labels[i], streams))
    return SyntheticData(samples, latents, means, maps)


def synth_generate(spec: SyntheticSpec, rng, out_dir) -> Manifest:
    """Write feature files plus ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    data = generate_samples(spec, rng)
    records = []
    for s in data.samples:
        refs = {}
        for name, _ in spec.modalities:
            rel = f"features/{s.id}_{name}.mpft"
            write_feature_file(out / rel, s.streams[name])
            refs[name] = StreamRef(rel, int(s.streams[name].shape[0]))
        records.append(SampleRecord(s.id, s.group_id, s.labels, refs))
    if spec.task == "multiclass":
        classes = [f"class{j}" for j in range(spec.classes)]
    else:
        classes = [f"emotion{j}" for j in range(spec.classes)]
    mods = [ModalitySpec(i, name, dim) for i, (name, dim) in enumerate(spec.modalities)]
    manifest = Manifest(spec.name, spec.task, classes, mods, records, out)
    write_manifest(manifest, out / "manifest.json")
    return manifest
