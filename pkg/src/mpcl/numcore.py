"""Dense float64 helpers, parameter storage, seeded randomness and a
recording tape for reverse-mode differentiation.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The tape
records every differentiable operation in execution order, so replaying it
backwards is already a valid topological order.
"""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import (
    DegenerateEmbeddingError,
    EmptyDenominatorError,
    NumericalError,
    ProtocolError,
    ShapeError,
)

NORM_EPS = 1e-12


def as_matrix(x, name: str = "input", check_finite: bool = True) -> np.ndarray:
    """Coerce ``x`` to a C-contiguous float64 matrix."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D matrix, got shape {arr.shape}")
    if check_finite and not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name}: contains NaN or Inf")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a", check_finite=False)
    b = as_matrix(b, "b", check_finite=False)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    return a @ b


def row_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def l2_normalize_rows(x) -> np.ndarray:
    x = as_matrix(x, "x")
    norms = row_norms(x)
    bad = np.flatnonzero(norms < NORM_EPS)
    if bad.size:
        raise DegenerateEmbeddingError(
            f"rows {bad.tolist()} have norm below {NORM_EPS:g}", rows=bad.tolist()
        )
    return x / norms[:, None]


def cosine_similarity_matrix(zm, zn) -> np.ndarray:
    zm = as_matrix(zm, "zm")
    zn = as_matrix(zn, "zn")
    if zm.shape != zn.shape:
        raise ShapeError(f"cosine_similarity_matrix: shapes differ, {zm.shape} vs {zn.shape}")
    return l2_normalize_rows(zm) @ l2_normalize_rows(zn).T


def log_sum_exp_row(x, mask=None) -> np.ndarray:
    """Row-wise ``log(sum(exp(x)))`` restricted to entries where ``mask`` is true."""
    x = as_matrix(x, "x", check_finite=False)
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"log_sum_exp_row: mask shape {mask.shape} != {x.shape}")
    empty = np.flatnonzero(~mask.any(axis=1))
    if empty.size:
        raise EmptyDenominatorError(f"rows {empty.tolist()} have no included entries")
    masked = np.where(mask, x, -np.inf)
    top = masked.max(axis=1)
    return top + np.log(np.exp(masked - top[:, None]).sum(axis=1))


def softmax_rows(x: np.ndarray, mask=None) -> np.ndarray:
    if mask is None:
        top = x.max(axis=1, keepdims=True)
        e = np.exp(x - top)
    else:
        masked = np.where(mask, x, -np.inf)
        top = masked.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(masked - top), 0.0)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# randomness


def derive_seed(seed: int, *labels) -> int:
    """Stable 64-bit sub-seed from a master seed and stage labels."""
    h = hashlib.sha256(str(int(seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little")


def make_rng(seed: int, *labels) -> np.random.Generator:
    """PCG64 generator; with labels, seeded from ``derive_seed(seed, *labels)``."""
    if labels:
        seed = derive_seed(seed, *labels)
    return np.random.Generator(np.random.PCG64(int(seed) % 2**64))


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Ordered name -> (value, grad) map. Gradients accumulate until zeroed."""

    def __init__(self):
        self._values: OrderedDict[str, np.ndarray] = OrderedDict()
        self._grads: OrderedDict[str, np.ndarray] = OrderedDict()

    def add(self, name: str, value) -> np.ndarray:
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def __contains__(self, name):
        return name in self._values

    def __len__(self):
        return len(self._values)

    def __iter__(self):
        return iter(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def set_value(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._values[name].shape:
            raise ShapeError(
                f"{name}: shape {value.shape} != stored {self._values[name].shape}"
            )
        self._values[name][...] = value

    def accumulate(self, name: str, g: np.ndarray) -> None:
        self._grads[name] += g

    def items(self):
        return self._values.items()

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def subset(self, prefix: str) -> "ParamStore":
        out = ParamStore()
        for name, v in self._values.items():
            if name.startswith(prefix):
                out.add(name, v)
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, v in self._values.items():
            out.add(name, v)
        return out

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.copy()) for k, v in self._values.items())

    def load_state(self, state) -> None:
        for name, v in state.items():
            self.set_value(name, v)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, v in self._values.items():
            h.update(name.encode())
            h.update(str(v.shape).encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# reverse mode


class Node:
    __slots__ = ("value", "grad", "parents", "vjp", "param", "requires_grad", "tape")

    def __init__(self, tape, value, parents=(), vjp=None, param=None, requires_grad=False):
        self.tape = tape
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.vjp = vjp
        self.param = param
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Records differentiable operations; ``backward`` replays them in reverse.

    Parameter leaves created with :meth:`param` accumulate their gradient into
    the owning :class:`ParamStore`. A tape can be replayed once.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._consumed = False

    # -- leaves -------------------------------------------------------------
    def param(self, store: ParamStore, name: str) -> Node:
        node = Node(self, store.value(name), param=(store, name), requires_grad=True)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64))

    def variable(self, value) -> Node:
        """Non-parameter leaf whose gradient is kept on ``node.grad``."""
        node = Node(self, np.asarray(value, dtype=np.float64), requires_grad=True)
        self.nodes.append(node)
        return node

    def custom(self, value, parents: Sequence[Node], vjp: Callable) -> Node:
        """Record an op with a hand-written vector-Jacobian product.

        ``vjp(g)`` must return one gradient (or None) per parent.
        """
        if self._consumed:
            raise ProtocolError("tape already replayed; record on a fresh tape")
        needs = any(p.requires_grad for p in parents)
        node = Node(self, value, parents, vjp if needs else None, requires_grad=needs)
        if needs:
            self.nodes.append(node)
        return node

    # -- ops ----------------------------------------------------------------
    def matmul(self, a: Node, b: Node) -> Node:
        out = matmul(a.value, b.value)
        return self.custom(out, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))

    def linear(self, x: Node, w: Node, b: Node | None = None) -> Node:
        if x.value.shape[1] != w.value.shape[0]:
            raise ShapeError(f"linear: input {x.value.shape} vs weight {w.value.shape}")
        out = x.value @ w.value
        if b is None:
            return self.custom(out, (x, w), lambda g: (g @ w.value.T, x.value.T @ g))
        out = out + b.value

        def vjp(g):
            return g @ w.value.T, x.value.T @ g, g.sum(axis=0, keepdims=True)

        return self.custom(out, (x, w, b), vjp)

    def add(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}")
        return self.custom(a.value + b.value, (a, b), lambda g: (g, g))

    def relu(self, a: Node) -> Node:
        on = a.value > 0
        return self.custom(np.where(on, a.value, 0.0), (a,), lambda g: (g * on,))

    def concat_cols(self, parts: Sequence[Node]) -> Node:
        widths = [p.value.shape[1] for p in parts]
        cuts = np.cumsum([0] + widths)
        out = np.concatenate([p.value for p in parts], axis=1)

        def vjp(g):
            return tuple(g[:, cuts[i]:cuts[i + 1]] for i in range(len(parts)))

        return self.custom(out, parts, vjp)

    def total(self, a: Node) -> Node:
        return self.custom(np.array(a.value.sum()), (a,), lambda g: (np.full(a.value.shape, float(g)),))

    def scale(self, a: Node, c: float) -> Node:
        return self.custom(a.value * c, (a,), lambda g: (g * c,))

    def segment_mean(self, x: Node, offsets: np.ndarray) -> Node:
        """Mean over each row segment ``[offsets[i], offsets[i+1])``."""
        lengths = np.diff(offsets)
        sums = np.add.reduceat(x.value, offsets[:-1], axis=0)
        out = sums / lengths[:, None]

        def vjp(g):
            return (np.repeat(g / lengths[:, None], lengths, axis=0),)

        return self.custom(out, (x,), vjp)

    def conv1d(self, x: Node, w: Node, b: Node | None, offsets, dilation=1, causal=True) -> Node:
        """Per-segment 1-D convolution over rows with same-length zero padding.

        ``w`` has shape (K * C_in, C_out) with tap k occupying rows
        ``k*C_in:(k+1)*C_in``. Causal taps look back ``(K-1-k)*dilation``
        frames; centred taps look ``(k-(K-1)//2)*dilation`` frames ahead.
        """
        n_rows, c_in = x.value.shape
        k_width = w.value.shape[0] // c_in
        if k_width * c_in != w.value.shape[0]:
            raise ShapeError(f"conv1d: weight rows {w.value.shape[0]} not a multiple of {c_in}")
        idx = conv_tap_index(offsets, k_width, dilation, causal)
        x_ext = np.vstack([x.value, np.zeros((1, c_in))])
        cols = x_ext[idx].transpose(1, 0, 2).reshape(n_rows, k_width * c_in)
        out = cols @ w.value
        if b is not None:
            out = out + b.value

        def vjp(g):
            gcols = (g @ w.value.T).reshape(n_rows, k_width, c_in)
            gx = np.zeros((n_rows + 1, c_in))
            for k in range(k_width):
                gx[idx[k]] += gcols[:, k, :]
            grads = [gx[:n_rows], cols.T @ g]
            if b is not None:
                grads.append(g.sum(axis=0, keepdims=True))
            return tuple(grads)

        parents = (x, w) if b is None else (x, w, b)
        return self.custom(out, parents, vjp)

    def self_attention(self, q: Node, k: Node, v: Node, offsets, heads: int) -> Node:
        """Multi-head scaled dot-product attention within each row segment."""
        n_rows, width = q.value.shape
        if width % heads:
            raise ShapeError(f"attention: {heads} heads do not divide width {width}")
        dh = width // heads
        inv = 1.0 / np.sqrt(dh)
        out = np.zeros_like(q.value)
        probs = []
        for s in range(len(offsets) - 1):
            a, e = offsets[s], offsets[s + 1]
            for h in range(heads):
                c = slice(h * dh, (h + 1) * dh)
                p = softmax_rows(q.value[a:e, c] @ k.value[a:e, c].T * inv)
                out[a:e, c] = p @ v.value[a:e, c]
                probs.append(p)

        def vjp(g):
            gq = np.zeros_like(q.value)
            gk = np.zeros_like(k.value)
            gv = np.zeros_like(v.value)
            it = iter(probs)
            for s in range(len(offsets) - 1):
                a, e = offsets[s], offsets[s + 1]
                for h in range(heads):
                    c = slice(h * dh, (h + 1) * dh)
                    p = next(it)
                    go = g[a:e, c]
                    gp = go @ v.value[a:e, c].T
                    gs = p * (gp - (gp * p).sum(axis=1, keepdims=True)) * inv
                    gq[a:e, c] = gs @ k.value[a:e, c]
                    gk[a:e, c] = gs.T @ q.value[a:e, c]
                    gv[a:e, c] = p.T @ go
            return gq, gk, gv

        return self.custom(out, (q, k, v), vjp)

    def softmax_cross_entropy(self, logits: Node, labels) -> Node:
        """Mean softmax cross-entropy against integer class labels."""
        z = logits.value
        labels = np.asarray(labels, dtype=np.int64)
        n = z.shape[0]
        lse = log_sum_exp_row(z)
        loss = np.array(np.mean(lse - z[np.arange(n), labels]))

        def vjp(g):
            p = softmax_rows(z)
            p[np.arange(n), labels] -= 1.0
            return (p * (float(g) / n),)

        return self.custom(loss, (logits,), vjp)

    def sigmoid_binary_cross_entropy(self, logits: Node, targets) -> Node:
        """Mean per-entry sigmoid binary cross-entropy against 0/1 targets."""
        z = logits.value
        t = np.asarray(targets, dtype=np.float64)
        if t.shape != z.shape:
            raise ShapeError(f"bce: targets {t.shape} vs logits {z.shape}")
        loss = np.array(np.mean(np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))))

        def vjp(g):
            return ((sigmoid(z) - t) * (float(g) / z.size),)

        return self.custom(loss, (logits,), vjp)

    # -- replay -------------------------------------------------------------
    def backward(self, root: Node, upstream=None) -> None:
        """Propagate ``upstream`` (default 1 for a scalar root) to every leaf."""
        if self._consumed:
            raise ProtocolError("backward already run on this tape")
        if not self.nodes or root.tape is not self or not root.requires_grad:
            raise ProtocolError("backward called without a recorded forward pass for this root")
        if upstream is None:
            if root.value.size != 1:
                raise ProtocolError("upstream gradient required for a non-scalar root")
            upstream = np.ones_like(root.value)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != root.value.shape:
            raise ShapeError(f"upstream shape {upstream.shape} != root shape {root.value.shape}")
        self._consumed = True
        root.grad = upstream.copy()
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            if node.param is not None:
                store, name = node.param
                store.accumulate(name, g)
                continue
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            node.grad = None if node is not root else node.grad


def backward(tape: Tape, root: Node, upstream=None) -> None:
    tape.backward(root, upstream)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def conv_tap_index(offsets: np.ndarray, k_width: int, dilation: int, causal: bool) -> np.ndarray:
    """(K, rows) source-row indices per tap; out-of-segment taps point past the end."""
    offsets = np.asarray(offsets, dtype=np.int64)
    n_rows = int(offsets[-1])
    lengths = np.diff(offsets)
    seg_start = np.repeat(offsets[:-1], lengths)
    seg_len = np.repeat(lengths, lengths)
    local = np.arange(n_rows) - seg_start
    if causal:
        shifts = [-(k_width - 1 - k) * dilation for k in range(k_width)]
    else:
        shifts = [(k - (k_width - 1) // 2) * dilation for k in range(k_width)]
    idx = np.empty((k_width, n_rows), dtype=np.int64)
    for k, s in enumerate(shifts):
        t = local + s
        ok = (t >= 0) & (t < seg_len)
        idx[k] = np.where(ok, seg_start + t, n_rows)
    return idx


def stack_ragged(items: Iterable[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-sample (T_i x D) matrices; returns rows and segment offsets."""
    items = list(items)
    lengths = [it.shape[0] for it in items]
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    return np.vstack(items).astype(np.float64, copy=False), offsets
