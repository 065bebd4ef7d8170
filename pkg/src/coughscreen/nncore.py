"""A small reverse-mode autodiff engine over numpy arrays.

Only what a ResNet needs: convolution, batch norm, ReLU, max pool,
global average pool, dense, softmax, cross-entropy and residual
addition, plus Adam.  Arrays keep their dtype, so float64 inputs give a
float64 graph for gradient checking while training runs in float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphNotBuilt, LengthMismatch, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Populate ``.grad`` on every tensor upstream of this one."""
        if self._backward is None and not self._parents:
            raise GraphNotBuilt("backward() called on a tensor with no recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("implicit gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # interior node: its gradient is no longer needed
                node.grad = None


def _needs_grad(*ts):
    return any(t.requires_grad for t in ts)


def _result(data, parents, backward):
    if _needs_grad(*parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


# --- elementwise --------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot add {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)
    return _result(a.data + b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)
    return _result(x.data * mask, (x,), backward)


# --- convolution ----------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OIHW weights (no bias)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch("conv2d expects 4-D input and weight")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if c != ci:
        raise ShapeMismatch(f"input has {c} channels, weight expects {ci}")
    if stride < 1 or pad < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(wd, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"kernel {kh}x{kw} does not fit input {h}x{wd} with pad {pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (n, ho, wo, c, kh, kw) -> rows of the im2col matrix
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        if w.requires_grad:
            w._accumulate((gmat.T @ cols).reshape(w.shape))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            dxp = np.zeros(xp.shape, dtype=xp.dtype)
            hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + hs:stride, j:j + ws:stride] += dcols[:, :, i, j]
            x._accumulate(dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp)
    return _result(np.ascontiguousarray(out), (x, w), backward)


# --- normalization ----------------------------------------------------------------

@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                train: bool = True) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Training mode uses batch statistics and folds them into the running
    estimates (running = momentum * running + (1 - momentum) * batch,
    unbiased variance); eval mode uses the running estimates.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,) or state.running_mean.shape != (c,):
        raise ShapeMismatch(f"batch norm parameters do not match {c} channels")
    axes = (0, 2, 3)
    eps = state.eps
    dt = x.dtype
    if train:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // c
        mom = state.momentum
        unbiased = var * (m / max(m - 1, 1))
        state.running_mean = (mom * state.running_mean + (1 - mom) * mu).astype(state.running_mean.dtype)
        state.running_var = (mom * state.running_var + (1 - mom) * unbiased).astype(state.running_var.dtype)
    else:
        mu = state.running_mean.astype(dt)
        var = state.running_var.astype(dt)
    inv = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx = g * gamma.data[None, :, None, None]
            if train:
                mean_g = gx.mean(axis=axes, keepdims=True)
                mean_gx = (gx * xhat).mean(axis=axes, keepdims=True)
                dx = (gx - mean_g - xhat * mean_gx) * inv[None, :, None, None]
            else:
                dx = gx * inv[None, :, None, None]
            x._accumulate(dx)
    return _result(out.astype(dt, copy=False), (x, gamma, beta), backward)


# --- pooling ----------------------------------------------------------------------

def maxpool2d(x: Tensor, kernel: int = 3, stride: int = 2, pad: int = 1) -> Tensor:
    n, c, h, wd = x.shape
    ho, wo = conv_output_size(h, kernel, stride, pad), conv_output_size(wd, kernel, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"pool window does not fit input {h}x{wd}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dxp = np.zeros(xp.shape, dtype=x.dtype)
        hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        for k in range(kernel * kernel):
            i, j = divmod(k, kernel)
            dxp[:, :, i:i + hs:stride, j:j + ws:stride] += np.where(arg == k, g, 0)
        x._accumulate(dxp[:, :, pad:pad + h, pad:pad + wd])
    return _result(np.ascontiguousarray(out), (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, wd = x.shape

    def backward(g):
        x._accumulate(np.broadcast_to(g[:, :, None, None] / (h * wd), x.shape))
    return _result(x.data.mean(axis=(2, 3)), (x,), backward)


# --- head -------------------------------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (B, in) times w.T for w shaped (out, in), plus bias."""
    if x.data.ndim != 2 or w.shape[1] != x.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"dense: input {x.shape}, weight {w.shape}, bias {b.shape}")

    def backward(g):
        if w.requires_grad:
            w._accumulate(g.T @ x.data)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))
        if x.requires_grad:
            x._accumulate(g @ w.data)
    return _result(x.data @ w.data.T + b.data, (x, w, b), backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))
    return _result(p, (x,), backward)


PROB_CLAMP = 1e-12


def cross_entropy(probs: Tensor, labels, class_weights=None) -> Tensor:
    """Mean of -w[y] * ln(max(p[y], 1e-12)); unweighted by default."""
    labels = np.asarray(labels, dtype=np.int64)
    b = probs.shape[0]
    if probs.data.ndim != 2 or labels.shape != (b,):
        raise ShapeMismatch(f"probabilities {probs.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError("label outside the class range")
    rows = np.arange(b)
    picked = probs.data[rows, labels]
    clamped = np.maximum(picked, PROB_CLAMP)
    wts = np.ones(b) if class_weights is None else np.asarray(class_weights, float)[labels]
    loss = np.asarray(-(wts * np.log(clamped)).sum() / b, dtype=probs.dtype)

    def backward(g):
        d = np.zeros_like(probs.data)
        live = picked >= PROB_CLAMP
        d[rows[live], labels[live]] = -wts[live] / (b * picked[live])
        probs._accumulate(d * g)
    return _result(loss, (probs,), backward)


# --- optimizer --------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr: float = 1e-4, **kw) -> "AdamState":
        arrays = [p.data if isinstance(p, Tensor) else np.asarray(p) for p in params]
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   lr=lr, **kw)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``params`` and ``grads`` are parallel sequences of arrays; a ``None``
    gradient counts as zero.  Returns ``params``.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise LengthMismatch(
            f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if p.shape != g.shape or m.shape != p.shape:
            raise LengthMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params


@dataclass
class Adam:
    """Adam over a list of parameter tensors, reading their ``.grad``."""

    params: list
    lr: float = 1e-4
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.for_params(self.params, lr=self.lr)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)
