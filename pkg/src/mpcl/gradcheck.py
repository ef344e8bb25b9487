"""Central finite-difference checks of every hand-written backward pass.

Two suites: the contrastive loss alone (gradient with respect to the
projections, every entry checked) and whole models (encoder + projection +
loss, gradient with respect to sampled parameter entries). ``inject_fault``
corrupts one backward rule so the checker can be shown to catch it.
"""
from __future__ import annotations

import contextlib
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import contrastive
from .contrastive import LossConfig, final_loss, loss_with_gradients
from .encoders import ENCODER_KINDS, EncoderConfig, MultimodalModel, ProjectionConfig
from .numcore import Tape, make_rng

EPS = 1e-4
TOLERANCE = 1e-4
FLOOR = 1e-6  # absolute scale below which differences count as round-off


def relative_error(analytic, numeric, floor: float = FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


# ---------------------------------------------------------------------------
# fault injection


_FAULT = {"loss": None}


@contextlib.contextmanager
def inject_fault(op: str, factor: float = 1.1):
    """Scale the backward output of one op by ``factor`` while active.

    ``op`` is a :class:`Tape` method name (``relu``, ``linear``, ``conv1d``
    ...) or ``"loss"`` for the analytic contrastive gradient.
    """
    if op == "loss":
        _FAULT["loss"] = factor
        try:
            yield
        finally:
            _FAULT["loss"] = None
        return
    original = getattr(Tape, op)

    def faulty(self, *args, **kwargs):
        node = original(self, *args, **kwargs)
        if node.vjp is not None:
            vjp = node.vjp
            node.vjp = lambda g: tuple(None if x is None else x * factor for x in vjp(g))
        return node

    setattr(Tape, op, faulty)
    try:
        yield
    finally:
        setattr(Tape, op, original)


def _loss_grads(z, cfg):
    value, grads = loss_with_gradients(z, cfg)
    if _FAULT["loss"] is not None:
        grads = {k: g * _FAULT["loss"] for k, g in grads.items()}
    return value, grads


def _loss_node(tape, z_nodes, cfg):
    node = contrastive.final_loss_node(tape, z_nodes, cfg)
    factor = _FAULT["loss"]
    if factor is not None and node.vjp is not None:
        vjp = node.vjp
        node.vjp = lambda g: tuple(None if x is None else x * factor for x in vjp(g))
    return node


# ---------------------------------------------------------------------------
# suites


@dataclass
class CheckResult:
    suite: str
    config: dict
    max_rel_error: float
    entries: int
    passed: bool
    skipped_kinks: int = 0


def check_loss(n_modalities: int, rng, n: int = 4, d_p: int = 8, include_positive: bool = False,
               eps: float = EPS, tol: float = TOLERANCE) -> CheckResult:
    """Every entry of every projection matrix."""
    cfg = LossConfig(include_positive_in_denominator=include_positive)
    z = {f"m{i}": rng.standard_normal((n, d_p)) for i in range(n_modalities)}
    _, grads = _loss_grads(z, cfg)
    worst, count = 0.0, 0
    for name, mat in z.items():
        numeric = np.empty_like(mat)
        for idx in np.ndindex(*mat.shape):
            old = mat[idx]
            mat[idx] = old + eps
            up = final_loss(z, cfg)[0]
            mat[idx] = old - eps
            down = final_loss(z, cfg)[0]
            mat[idx] = old
            numeric[idx] = (up - down) / (2 * eps)
        worst = max(worst, float(relative_error(grads[name], numeric).max()))
        count += mat.size
    config = {"modalities": n_modalities, "n": n, "d_p": d_p, "include_positive": include_positive}
    return CheckResult("loss", config, worst, count, worst < tol)


def random_encoder_config(kind: str, rng, input_dim: int, embed_dim: int = 16) -> EncoderConfig:
    if kind == "mlp":
        return EncoderConfig("mlp", input_dim, embed_dim, hidden_dim=int(rng.integers(4, 13)))
    if kind == "tcn":
        depth = int(rng.integers(1, 4))
        return EncoderConfig("tcn", input_dim, embed_dim, channels=int(rng.integers(3, 8)),
                             kernel_width=int(rng.integers(1, 4)), dilations=tuple(2 ** i for i in range(depth)),
                             causal=bool(rng.integers(0, 2)), residual=bool(rng.integers(0, 2)))
    heads = int(rng.choice([1, 2]))
    return EncoderConfig("attn", input_dim, embed_dim, model_dim=4 * heads, heads=heads,
                         ff_dim=int(rng.integers(4, 10)))


def check_model(kind: str, n_modalities: int, rng, n: int = 4, d_e: int = 16, d_p: int = 8,
                per_tensor: int = 4, eps: float = EPS, tol: float = TOLERANCE) -> CheckResult:
    """Loss gradient with respect to ``per_tensor`` random entries of every
    parameter tensor of a freshly built model."""
    names = [f"m{i}" for i in range(n_modalities)]
    dims = {m: int(rng.integers(2, 7)) for m in names}
    encoders = {m: random_encoder_config(kind, rng, dims[m], d_e) for m in names}
    model = MultimodalModel.build(names, encoders, ProjectionConfig(d_e, int(rng.integers(6, 13)), d_p), rng)
    # non-zero biases keep small ReLU layers alive and exercise the bias gradients
    for pname in model.store.names():
        if pname.endswith(".bias"):
            model.store.set_value(pname, 0.1 * rng.standard_normal(model.store.value(pname).shape))
    data = {m: [rng.standard_normal((int(rng.integers(1, 7)), dims[m])) for _ in range(n)] for m in names}
    cfg = LossConfig(include_positive_in_denominator=bool(rng.integers(0, 2)))

    def forward():
        tape = Tape()
        z = {m: model.project(tape, m, model.embed(tape, m, data[m])) for m in names}
        return tape, _loss_node(tape, z, cfg)

    def value():
        return float(forward()[1].value)

    tape, loss = forward()
    tape.backward(loss)
    store = model.store
    base = float(loss.value)
    worst, count, kinks = 0.0, 0, 0
    for pname in store.names():
        w = store.value(pname)
        g = store.grad(pname)
        flat = rng.permutation(w.size)
        checked = 0
        for pos in flat:
            if checked >= per_tensor:
                break
            idx = np.unravel_index(pos, w.shape)
            old = w[idx]
            w[idx] = old + eps
            up = value()
            w[idx] = old - eps
            down = value()
            w[idx] = old
            # a ReLU switching inside [-eps, eps] makes the two one-sided slopes disagree
            right, left = (up - base) / eps, (base - down) / eps
            if abs(right - left) > 1e-2 * max(abs(right), abs(left), 1e-3):
                kinks += 1
                continue
            worst = max(worst, float(relative_error(g[idx], (up - down) / (2 * eps))))
            checked += 1
            count += 1
    config = {"kind": kind, "modalities": n_modalities, "n": n, "d_e": d_e, "d_p": d_p,
              "include_positive": cfg.include_positive_in_denominator,
              "encoder": encoders[names[0]].to_dict()}
    return CheckResult("model", config, worst, count, worst < tol, kinks)


def run_gradcheck(configs: int = 20, seed: int = 0, eps: float = EPS, tol: float = TOLERANCE,
                  fault: str | None = None) -> dict:
    """Loss suite for |M| in {2,3,4} (both denominator policies) plus
    ``configs`` random whole-model checks cycling through encoder kinds and
    modality counts. Returns a JSON-ready report."""
    started = time.perf_counter()
    rng = make_rng(seed, "gradcheck")
    ctx = inject_fault(fault) if fault else contextlib.nullcontext()
    results = []
    with ctx:
        for m in (2, 3, 4):
            for inc in (False, True):
                results.append(check_loss(m, rng, include_positive=inc, eps=eps, tol=tol))
        for i in range(configs):
            kind = ENCODER_KINDS[i % len(ENCODER_KINDS)]
            m = (2, 3, 4)[(i // len(ENCODER_KINDS)) % 3]
            results.append(check_model(kind, m, rng, eps=eps, tol=tol))
    worst = max(r.max_rel_error for r in results)
    return {
        "passed": all(r.passed for r in results),
        "max_rel_error": worst,
        "tolerance": tol,
        "eps": eps,
        "seed": seed,
        "fault": fault,
        "seconds": round(time.perf_counter() - started, 3),
        "checks": [asdict(r) for r in results],
    }
