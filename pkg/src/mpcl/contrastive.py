"""Pairwise cross-modal contrastive loss.

For an ordered modality pair (m, n) and a batch of N samples, sample i's
positive is its own modality-n embedding; its negatives are the modality-n
embeddings of every other sample in the batch. By default the positive is
left out of the softmax denominator, so the loss can go negative. The final
loss averages the summed pair losses over all ordered pairs with m != n.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import permutations

import numpy as np

from .exceptions import ConfigError, DegenerateEmbeddingError, InsufficientNegativesError, ShapeError
from .numcore import NORM_EPS, Node, Tape, as_matrix, log_sum_exp_row, row_norms, softmax_rows


@dataclass
class LossConfig:
    temperature: float = 0.07
    include_positive_in_denominator: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")

    def to_dict(self):
        return asdict(self)


@dataclass
class PairLossBreakdown:
    per_sample: np.ndarray
    total: float


def _normalize(z, which):
    z = as_matrix(z, which)
    norms = row_norms(z)
    bad = np.flatnonzero(norms < NORM_EPS)
    if bad.size:
        raise DegenerateEmbeddingError(f"{which}: rows {bad.tolist()} have zero norm", rows=bad.tolist())
    return z / norms[:, None], norms


def _check_pair(zm, zn):
    if zm.shape != zn.shape:
        raise ShapeError(f"pair_loss: shapes differ, {zm.shape} vs {zn.shape}")
    if zm.shape[0] < 2:
        raise InsufficientNegativesError(f"pair_loss needs N >= 2 samples, got {zm.shape[0]}")


def _denominator_mask(n, cfg):
    return np.ones((n, n), dtype=bool) if cfg.include_positive_in_denominator else ~np.eye(n, dtype=bool)


def _pair_terms(u, v, cfg):
    logits = (u @ v.T) / cfg.temperature
    mask = _denominator_mask(len(u), cfg)
    per_sample = log_sum_exp_row(logits, mask) - np.diag(logits)
    return per_sample, logits, mask


def pair_loss(zm, zn, cfg: LossConfig | None = None) -> PairLossBreakdown:
    cfg = cfg or LossConfig()
    u, _ = _normalize(zm, "zm")
    v, _ = _normalize(zn, "zn")
    _check_pair(u, v)
    per_sample, _, _ = _pair_terms(u, v, cfg)
    return PairLossBreakdown(per_sample, float(per_sample.sum()))


def _ordered_pairs(z_by_modality):
    keys = list(z_by_modality)
    if len(keys) < 2:
        raise ConfigError(f"final loss needs at least 2 modalities, got {len(keys)}")
    ns = {np.shape(z_by_modality[k])[0] for k in keys}
    if len(ns) != 1:
        raise ShapeError(f"modalities disagree on batch size: {sorted(ns)}")
    return list(permutations(keys, 2))


def final_loss(z_by_modality: dict, cfg: LossConfig | None = None):
    """Return ``(L_final, {(m, n): PairLossBreakdown})``."""
    cfg = cfg or LossConfig()
    pairs = _ordered_pairs(z_by_modality)
    breakdown = {(m, n): pair_loss(z_by_modality[m], z_by_modality[n], cfg) for m, n in pairs}
    total = 0.0
    for key in pairs:
        total += breakdown[key].total
    return total / len(pairs), breakdown


def _normalize_vjp(u, norms, gu):
    # d(x/|x|) applied to gu: (gu - u <u, gu>) / |x|
    return (gu - u * np.einsum("ij,ij->i", u, gu)[:, None]) / norms[:, None]


def loss_with_gradients(z_by_modality: dict, cfg: LossConfig | None = None):
    """Final loss and its exact gradient w.r.t. every raw embedding matrix."""
    cfg = cfg or LossConfig()
    pairs = _ordered_pairs(z_by_modality)
    unit, norms = {}, {}
    for key, z in z_by_modality.items():
        unit[key], norms[key] = _normalize(z, f"z[{key}]")
    g_unit = {key: np.zeros_like(u) for key, u in unit.items()}
    scale = 1.0 / len(pairs)
    total = 0.0
    n = next(iter(unit.values())).shape[0]
    if n < 2:
        raise InsufficientNegativesError(f"pair_loss needs N >= 2 samples, got {n}")
    eye = np.eye(n)
    for m, k in pairs:
        u, v = unit[m], unit[k]
        per_sample, logits, mask = _pair_terms(u, v, cfg)
        total += per_sample.sum()
        # dL/dS = (softmax over the denominator set - onehot(positive)) / tau
        g_sim = (softmax_rows(logits, mask) - eye) * (scale / cfg.temperature)
        g_unit[m] += g_sim @ v
        g_unit[k] += g_sim.T @ u
    grads = {key: _normalize_vjp(unit[key], norms[key], g_unit[key]) for key in unit}
    return total * scale, grads


def loss_gradients(z_by_modality: dict, cfg: LossConfig | None = None) -> dict:
    return loss_with_gradients(z_by_modality, cfg)[1]


def final_loss_node(tape: Tape, z_nodes: dict, cfg: LossConfig | None = None) -> Node:
    """Record the final loss on ``tape`` with its analytic backward."""
    keys = list(z_nodes)
    value, grads = loss_with_gradients({k: z_nodes[k].value for k in keys}, cfg)

    def vjp(g):
        return tuple(grads[k] * float(g) for k in keys)

    return tape.custom(np.array(value), [z_nodes[k] for k in keys], vjp)
