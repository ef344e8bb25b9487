"""Per-modality sequence encoders and the fc-ReLU-fc projection head.

Every encoder maps a ragged batch of frame sequences (one T_i x D matrix per
sample) to an N x embed_dim matrix. Sequences stay ragged: they are stacked
row-wise with segment offsets and every op (convolution, attention, pooling)
respects segment boundaries, so samples never see each other.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigError, ShapeError
from .numcore import Node, ParamStore, Tape, stack_ragged

ENCODER_KINDS = ("mlp", "tcn", "attn")


@dataclass(frozen=True)
class ModalityId:
    index: int
    name: str


@dataclass
class SequenceBatch:
    modality: ModalityId
    items: list

    def __post_init__(self):
        if not self.items:
            raise ShapeError(f"{self.modality.name}: empty batch")
        self.items = [np.atleast_2d(np.asarray(it, dtype=np.float64)) for it in self.items]
        dims = {it.shape[1] for it in self.items}
        if len(dims) != 1:
            raise ShapeError(f"{self.modality.name}: frame dims differ within batch: {sorted(dims)}")
        if any(it.shape[0] < 1 for it in self.items):
            raise ShapeError(f"{self.modality.name}: every sequence needs at least one frame")

    @property
    def dim(self) -> int:
        return self.items[0].shape[1]

    def __len__(self):
        return len(self.items)

    def stacked(self):
        return stack_ragged(self.items)


@dataclass
class EncoderConfig:
    kind: str = "mlp"
    input_dim: int = 1
    embed_dim: int = 512
    hidden_dim: int = 512
    # tcn
    channels: int = 64
    kernel_width: int = 3
    dilations: tuple = (1, 2, 4)
    causal: bool = True
    residual: bool = True
    # attn
    model_dim: int = 64
    heads: int = 4
    ff_dim: int = 128

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        self.validate()

    def validate(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}; expected one of {ENCODER_KINDS}")
        for name in ("input_dim", "embed_dim", "hidden_dim", "channels", "kernel_width",
                     "model_dim", "heads", "ff_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"encoder {name} must be positive, got {getattr(self, name)}")
        if self.kind == "tcn":
            d = self.dilations
            if not d or any(x & (x - 1) for x in d) or any(b <= a for a, b in zip(d, d[1:])):
                raise ConfigError(f"tcn dilations must be strictly increasing powers of 2, got {d}")
        if self.kind == "attn" and self.model_dim % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide model_dim {self.model_dim}")

    def to_dict(self):
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ProjectionConfig:
    in_dim: int = 512
    hidden_dim: int = 512
    out_dim: int = 256

    def __post_init__(self):
        for name in ("in_dim", "hidden_dim", "out_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"projection {name} must be positive")

    def to_dict(self):
        return asdict(self)


def glorot_uniform(rng, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def _dense(store, rng, name, fan_in, fan_out):
    store.add(f"{name}.weight", glorot_uniform(rng, fan_in, fan_out))
    store.add(f"{name}.bias", np.zeros((1, fan_out)))


def layer_shapes(cfg: EncoderConfig) -> list[tuple[str, int, int, int]]:
    """(layer name, fan_in, fan_out, weight rows) for every dense/conv layer."""
    if cfg.kind == "mlp":
        return [("fc1", cfg.input_dim, cfg.hidden_dim, cfg.input_dim),
                ("fc2", cfg.hidden_dim, cfg.embed_dim, cfg.hidden_dim)]
    if cfg.kind == "tcn":
        out, c_in, k = [], cfg.input_dim, cfg.kernel_width
        for i, _ in enumerate(cfg.dilations):
            out.append((f"conv{i}", k * c_in, k * cfg.channels, k * c_in))
            c_in = cfg.channels
        out.append(("fc", cfg.channels, cfg.embed_dim, cfg.channels))
        return out
    m = cfg.model_dim
    return [("embed", cfg.input_dim, m, cfg.input_dim),
            ("query", m, m, m), ("key", m, m, m), ("value", m, m, m), ("out", m, m, m),
            ("ff1", m, cfg.ff_dim, m), ("ff2", cfg.ff_dim, m, cfg.ff_dim),
            ("fc", m, cfg.embed_dim, m)]


def init_params(cfg, rng, store: ParamStore | None = None, prefix: str = "") -> ParamStore:
    """Glorot-uniform weights, zero biases, added to ``store`` under ``prefix``."""
    store = ParamStore() if store is None else store
    if isinstance(cfg, ProjectionConfig):
        _dense(store, rng, f"{prefix}fc1", cfg.in_dim, cfg.hidden_dim)
        _dense(store, rng, f"{prefix}fc2", cfg.hidden_dim, cfg.out_dim)
        return store
    for name, fan_in, fan_out, rows in layer_shapes(cfg):
        cols = fan_out // cfg.kernel_width if name.startswith("conv") else fan_out
        w = glorot_uniform(rng, fan_in, fan_out, shape=(rows, cols))
        store.add(f"{prefix}{name}.weight", w)
        store.add(f"{prefix}{name}.bias", np.zeros((1, cols)))
    return store


# ---------------------------------------------------------------------------
# forward on a tape


def _dense_fwd(tape, store, name, x: Node, relu=False) -> Node:
    y = tape.linear(x, tape.param(store, f"{name}.weight"), tape.param(store, f"{name}.bias"))
    return tape.relu(y) if relu else y


def encoder_forward(tape: Tape, cfg: EncoderConfig, store: ParamStore, x: Node,
                    offsets: np.ndarray, prefix: str = "") -> Node:
    """Encode stacked ragged rows ``x`` (segments given by ``offsets``)."""
    if x.value.shape[1] != cfg.input_dim:
        raise ShapeError(f"{prefix or 'encoder'}: frame dim {x.value.shape[1]} != input_dim {cfg.input_dim}")
    p = prefix
    if cfg.kind == "mlp":
        pooled = tape.segment_mean(x, offsets)
        return _dense_fwd(tape, store, f"{p}fc2", _dense_fwd(tape, store, f"{p}fc1", pooled, relu=True))
    if cfg.kind == "tcn":
        h = x
        last = len(cfg.dilations) - 1
        for i, d in enumerate(cfg.dilations):
            y = tape.conv1d(h, tape.param(store, f"{p}conv{i}.weight"),
                            tape.param(store, f"{p}conv{i}.bias"), offsets, d, cfg.causal)
            if i < last:
                y = tape.relu(y)
            if cfg.residual and y.value.shape[1] == h.value.shape[1]:
                y = tape.add(y, h)
            h = y
        return _dense_fwd(tape, store, f"{p}fc", tape.segment_mean(h, offsets))
    # attn
    e = _dense_fwd(tape, store, f"{p}embed", x)
    q = _dense_fwd(tape, store, f"{p}query", e)
    k = _dense_fwd(tape, store, f"{p}key", e)
    v = _dense_fwd(tape, store, f"{p}value", e)
    att = _dense_fwd(tape, store, f"{p}out", tape.self_attention(q, k, v, offsets, cfg.heads))
    h = tape.add(e, att)
    ff = _dense_fwd(tape, store, f"{p}ff2", _dense_fwd(tape, store, f"{p}ff1", h, relu=True))
    h = tape.add(h, ff)
    return _dense_fwd(tape, store, f"{p}fc", tape.segment_mean(h, offsets))


def projection_forward(tape: Tape, cfg: ProjectionConfig, store: ParamStore, f: Node,
                       prefix: str = "") -> Node:
    if f.value.shape[1] != cfg.in_dim:
        raise ShapeError(f"projection: input dim {f.value.shape[1]} != in_dim {cfg.in_dim}")
    return _dense_fwd(tape, store, f"{prefix}fc2", _dense_fwd(tape, store, f"{prefix}fc1", f, relu=True))


# ---------------------------------------------------------------------------
# array-level entry points


def _encode(kind, cfg, params, batch, prefix):
    if cfg.kind != kind:
        raise ConfigError(f"encode_{kind} called with a {cfg.kind!r} config")
    if not isinstance(batch, SequenceBatch):
        batch = SequenceBatch(ModalityId(0, "input"), list(batch))
    x, offsets = batch.stacked()
    tape = Tape()
    return encoder_forward(tape, cfg, params, tape.constant(x), offsets, prefix).value


def encode_mlp(cfg, params, batch, prefix=""):
    return _encode("mlp", cfg, params, batch, prefix)


def encode_tcn(cfg, params, batch, prefix=""):
    return _encode("tcn", cfg, params, batch, prefix)


def encode_attn(cfg, params, batch, prefix=""):
    return _encode("attn", cfg, params, batch, prefix)


def encode(cfg, params, batch, prefix=""):
    return _encode(cfg.kind, cfg, params, batch, prefix)


def project(cfg: ProjectionConfig, params, f, prefix="") -> np.ndarray:
    tape = Tape()
    return projection_forward(tape, cfg, params, tape.constant(np.atleast_2d(f)), prefix).value


# ---------------------------------------------------------------------------
# the multimodal model


@dataclass
class MultimodalModel:
    """Encoders and projection heads for an ordered modality set."""

    modalities: list
    encoders: dict
    projection: ProjectionConfig
    store: ParamStore = field(default_factory=ParamStore)

    @classmethod
    def build(cls, modalities, encoders, projection, rng):
        mods = [m if isinstance(m, ModalityId) else ModalityId(i, m) for i, m in enumerate(modalities)]
        if [m.index for m in mods] != list(range(len(mods))) or len({m.name for m in mods}) != len(mods):
            raise ConfigError("modality ids must be dense 0..M-1 with unique names")
        model = cls(mods, dict(encoders), projection)
        for m in mods:
            cfg = model.encoders[m.name]
            if cfg.embed_dim != projection.in_dim:
                raise ConfigError(f"{m.name}: embed_dim {cfg.embed_dim} != projection in_dim {projection.in_dim}")
            init_params(cfg, rng, model.store, f"enc.{m.name}.")
            init_params(projection, rng, model.store, f"proj.{m.name}.")
        return model

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.modalities]

    @property
    def embed_dim(self) -> int:
        return self.projection.in_dim

    def embed(self, tape: Tape, name: str, items) -> Node:
        x, offsets = stack_ragged(items)
        return encoder_forward(tape, self.encoders[name], self.store, tape.constant(x), offsets,
                               f"enc.{name}.")

    def project(self, tape: Tape, name: str, f: Node) -> Node:
        return projection_forward(tape, self.projection, self.store, f, f"proj.{name}.")

    def features(self, name: str, items, batch_size: int = 256) -> np.ndarray:
        """Pre-projection embeddings for full sequences (no gradient)."""
        out = []
        for start in range(0, len(items), batch_size):
            out.append(self.embed(Tape(), name, items[start:start + batch_size]).value)
        return np.vstack(out)
