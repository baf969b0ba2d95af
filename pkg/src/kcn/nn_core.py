"""Dense neural-network layers with reverse-mode gradients.

Every operation takes a :class:`Tape` (or ``None`` for inference).  When a tape
is given the operation records a closure that, on :meth:`Tape.backward`,
accumulates gradients into the ``grad`` fields of its :class:`Node` inputs.
Plain ``ndarray`` inputs are treated as constants.

This module is the reference implementation of the network maths; the compiled
kernel in ``_ckernels`` reproduces it and is tested against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from .errors import InvalidInput, NumericalError

SAGE_NORM_EPS = 1e-12


class Node:
    """A tensor value with an optional gradient accumulator."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name: str = ""):
        self.value = value
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"{type(self).__name__}({self.name or ''}{self.value.shape})"


class Parameter(Node):
    """Trainable tensor.  ``value`` and ``grad`` may be views into flat buffers."""

    __slots__ = ()

    def __init__(self, value, grad=None, name: str = ""):
        super().__init__(value, name)
        self.grad = np.zeros_like(value) if grad is None else grad
        if self.grad.shape != self.value.shape:
            raise InvalidInput(f"gradient shape {self.grad.shape} != value shape {self.value.shape}")

    def accumulate(self, g):
        self.grad += g

    def zero_grad(self):
        self.grad[...] = 0.0


class Tape:
    """Records backward closures in forward order and replays them in reverse."""

    def __init__(self):
        self._ops = []

    def __len__(self):
        return len(self._ops)

    def record(self, fn):
        self._ops.append(fn)

    def backward(self, out: Node, seed=None):
        out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for fn in reversed(self._ops):
            fn()
        self._ops.clear()


def _val(x):
    return x.value if isinstance(x, Node) else x


def _wants_grad(x):
    return isinstance(x, Node)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {what}")


# activations: name -> (f(z), f'(z))
def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0.0).astype(np.float64)


def softplus(z):
    return np.logaddexp(0.0, z)


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
    "softplus": (softplus, expit),
}


def _activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise InvalidInput(f"unknown activation {name!r}") from None


def _as_node(tape, value, name=""):
    node = Node(value, name)
    _check_finite(value, name or "layer output")
    return node


def gcn_layer(tape, A, H, W, activation="relu"):
    """``act(A @ H @ W)``.  ``A`` may be a constant (dense or scipy sparse) or a Node."""
    a, h, w = _val(A), _val(H), _val(W)
    if a.shape[0] != a.shape[1] or a.shape[1] != h.shape[0] or h.shape[1] != w.shape[0]:
        raise InvalidInput(f"gcn_layer shapes do not conform: A{a.shape} H{h.shape} W{w.shape}")
    f, df = _activation(activation)
    ah = np.asarray(a @ h)
    z = ah @ w
    out = _as_node(tape, f(z), "gcn")
    if tape is not None:
        def backward():
            dz = out.grad * df(z)
            if _wants_grad(W):
                W.accumulate(ah.T @ dz)
            if _wants_grad(H) or _wants_grad(A):
                dah = dz @ w.T
                if _wants_grad(H):
                    H.accumulate(np.asarray(a.T @ dah))
                if _wants_grad(A):
                    A.accumulate(dah @ h.T)
        tape.record(backward)
    return out


def attention_adjacency(tape, H, W_att, A):
    """Dot-product attention mask applied elementwise to ``A``.

    ``M = softplus(P P^T)`` with ``P = H W_att``; ``U`` is ``M`` rescaled to unit
    diagonal and the result is ``A * U``.
    """
    h, w, a = _val(H), _val(W_att), _val(A)
    n = h.shape[0]
    if h.shape[1] != w.shape[0] or a.shape != (n, n):
        raise InvalidInput(f"attention shapes do not conform: H{h.shape} W_att{w.shape} A{a.shape}")
    p = h @ w
    s = p @ p.T
    m = softplus(s)
    lam = np.diag(m).copy()
    if not np.all(lam > 0.0):
        raise NumericalError("attention matrix has a nonpositive diagonal")
    r = 1.0 / np.sqrt(lam)
    u = m * r[:, None] * r[None, :]
    np.fill_diagonal(u, 1.0)
    out = _as_node(tape, a * u, "attention")
    if tape is not None:
        def backward():
            g = out.grad
            if _wants_grad(A):
                A.accumulate(g * u)
            if not (_wants_grad(H) or _wants_grad(W_att)):
                return
            du = g * a
            dm = du * r[:, None] * r[None, :]
            dum = du * m
            dr = dum @ r + dum.T @ r
            dlam = dr * (-0.5) * r ** 3
            dm[np.diag_indices(n)] += dlam
            ds = dm * expit(s)
            dp = (ds + ds.T) @ p
            if _wants_grad(W_att):
                W_att.accumulate(h.T @ dp)
            if _wants_grad(H):
                H.accumulate(dp @ w.T)
        tape.record(backward)
    return out


def _max_excluding_self(q):
    """Per row j and column c, the max of ``q[k, c]`` over ``k != j``.

    Returns the values and the winning row indices; ties go to the lowest index.
    """
    n = q.shape[0]
    cols = np.arange(q.shape[1])
    first = np.argmax(q, axis=0)
    masked = q.copy()
    masked[first, cols] = -np.inf
    second = np.argmax(masked, axis=0)
    arg = np.broadcast_to(first, q.shape).copy()
    rows = np.arange(n)[:, None]
    own = rows == first[None, :]
    arg[own] = np.broadcast_to(second, q.shape)[own]
    return q[arg, cols[None, :]], arg


def sage_layer(tape, H, W1, W2, W_pool, b, activation="relu"):
    """GraphSAGE layer over a complete graph with a max-pooling aggregator.

    Row ``j`` of the output is ``act(h_j W1 + g_j W2)`` scaled to unit L2 norm,
    where ``g_j`` is the elementwise max over ``k != j`` of ``relu(h_k W_pool + b)``.
    """
    h, w1, w2, wp, bv = (_val(x) for x in (H, W1, W2, W_pool, b))
    n = h.shape[0]
    if n < 2:
        raise InvalidInput("sage_layer needs at least two nodes")
    if (w1.shape[0] != h.shape[1] or wp.shape[0] != h.shape[1] or bv.shape != (wp.shape[1],)
            or w2.shape != (wp.shape[1], w1.shape[1])):
        raise InvalidInput("sage_layer weight shapes do not conform")
    f, df = _activation(activation)
    qpre = h @ wp + bv
    q = _relu(qpre)
    g, arg = _max_excluding_self(q)
    z = h @ w1 + g @ w2
    rmat = f(z)
    norms = np.sqrt(np.sum(rmat * rmat, axis=1))
    safe = np.maximum(norms, SAGE_NORM_EPS)
    y = rmat / safe[:, None]
    out = _as_node(tape, y, "sage")
    if tape is not None:
        def backward():
            dy = out.grad
            live = norms > SAGE_NORM_EPS
            proj = np.sum(y * dy, axis=1)
            dr = np.where(live[:, None], (dy - y * proj[:, None]) / safe[:, None], dy / safe[:, None])
            dz = dr * df(z)
            if _wants_grad(W1):
                W1.accumulate(h.T @ dz)
            if _wants_grad(W2):
                W2.accumulate(g.T @ dz)
            dg = dz @ w2.T
            dq = np.zeros_like(q)
            np.add.at(dq, (arg, np.broadcast_to(np.arange(q.shape[1]), q.shape)), dg)
            dqpre = dq * _relu_grad(qpre)
            if _wants_grad(W_pool):
                W_pool.accumulate(h.T @ dqpre)
            if _wants_grad(b):
                b.accumulate(dqpre.sum(axis=0))
            if _wants_grad(H):
                H.accumulate(dz @ w1.T + dqpre @ wp.T)
        tape.record(backward)
    return out


def dropout(tape, H, mask):
    """Multiply by a pre-scaled mask (see :func:`dropout_mask`).  ``mask=None`` is the identity."""
    if mask is None:
        return H
    h = _val(H)
    if mask.shape != h.shape:
        raise InvalidInput(f"dropout mask shape {mask.shape} != input shape {h.shape}")
    out = Node(h * mask, "dropout")
    if tape is not None and _wants_grad(H):
        tape.record(lambda: H.accumulate(out.grad * mask))
    return out


def dropout_mask(rng, shape, rate):
    """Inverted-dropout mask: entries are ``0`` or ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise InvalidInput("dropout rate must lie in [0, 1)")
    return (rng.random(shape) >= rate) / (1.0 - rate)


def select_row(tape, H, i=0):
    h = _val(H)
    out = Node(h[i:i + 1].copy(), "row")
    if tape is not None and _wants_grad(H):
        def backward():
            g = np.zeros_like(h)
            g[i] = out.grad[0]
            H.accumulate(g)
        tape.record(backward)
    return out


def dense(tape, h_row, w_den, activation="identity"):
    """``act(h_row @ w_den)`` for a single row; returns shape ``(1, out_dim)``."""
    h, w = _val(h_row), _val(w_den)
    h = h.reshape(1, -1)
    if h.shape[1] != w.shape[0]:
        raise InvalidInput(f"dense shapes do not conform: {h.shape} @ {w.shape}")
    f, df = _activation(activation)
    z = h @ w
    out = _as_node(tape, f(z), "dense")
    if tape is not None:
        def backward():
            dz = out.grad * df(z)
            if _wants_grad(w_den):
                w_den.accumulate(h.T @ dz)
            if _wants_grad(h_row):
                h_row.accumulate((dz @ w.T).reshape(_val(h_row).shape))
        tape.record(backward)
    return out


def sigma_div(u):
    """``[-u1 / u2, 0]``; the ratio activation used to emulate kriging."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.shape != (2,):
        raise InvalidInput("sigma_div expects a length-2 vector")
    if u[1] == 0.0:
        raise NumericalError("sigma_div: second component is zero")
    return np.array([-u[0] / u[1], 0.0])


def mse_loss(tape, yhat, y):
    pred = _val(yhat)
    diff = float(pred.reshape(-1)[0]) - float(y)
    out = Node(np.array(diff * diff), "mse")
    if tape is not None and _wants_grad(yhat):
        def backward():
            g = np.zeros_like(pred)
            g.reshape(-1)[0] = 2.0 * diff * float(out.grad)
            yhat.accumulate(g)
        tape.record(backward)
    return out


def check_count(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0) or np.any(y != np.round(y)) or not np.all(np.isfinite(y)):
        raise InvalidInput("zero-inflated Poisson targets must be nonnegative integers")
    return y


def zip_nll(u, log_rate, y):
    """Negative log-likelihood of counts under a zero-inflated Poisson.

    ``p(0) = (1 - pi) + pi exp(-rate)`` and ``p(y) = pi Poisson(y; rate)`` for
    ``y > 0``, with ``pi = expit(u)`` and ``rate = exp(log_rate)``.  Vectorised.
    """
    u = np.asarray(u, dtype=np.float64)
    log_rate = np.asarray(log_rate, dtype=np.float64)
    y = check_count(y)
    log_pi = -np.logaddexp(0.0, -u)
    log_1mpi = -np.logaddexp(0.0, u)
    rate = np.exp(log_rate)
    zero = -np.logaddexp(log_1mpi, log_pi - rate)
    positive = -(log_pi + y * log_rate - rate - gammaln(y + 1.0))
    return np.where(y == 0, zero, positive)


def zip_pmf(y, u, log_rate):
    return np.exp(-zip_nll(u, log_rate, y))


def _zip_grad(u, log_rate, y):
    pi = expit(u)
    rate = math.exp(log_rate)
    if y == 0:
        e = math.exp(-rate)
        p0 = (1.0 - pi) + pi * e
        return -pi * (1.0 - pi) * (e - 1.0) / p0, pi * rate * e / p0
    return pi - 1.0, rate - y


def zip_nll_loss(tape, out_uv, y):
    """Scalar ZIP NLL for a ``(1, 2)`` head output ``[u, log_rate]``."""
    v = _val(out_uv).reshape(-1)
    if v.shape != (2,):
        raise InvalidInput("zip head must produce two values")
    y = float(check_count(y))
    u, lr = float(v[0]), float(v[1])
    out = Node(np.array(float(zip_nll(u, lr, y))), "zip")
    if tape is not None and _wants_grad(out_uv):
        def backward():
            du, dl = _zip_grad(u, lr, y)
            g = np.array([du, dl]) * float(out.grad)
            out_uv.accumulate(g.reshape(_val(out_uv).shape))
        tape.record(backward)
    return out


def glorot_uniform(rng, shape):
    fan_in, fan_out = shape[0], shape[-1]
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


@dataclass
class AdamState:
    """Adam moments, one pair per parameter array."""

    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure(self, arrays):
        if not self.m:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        if len(self.m) != len(arrays) or any(m.shape != a.shape for m, a in zip(self.m, arrays)):
            raise InvalidInput("Adam state does not match the parameter list")


def adam_step(params, state: AdamState):
    """One bias-corrected Adam update of ``params`` (Parameters) in place."""
    values = [p.value for p in params]
    state.ensure(values)
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
