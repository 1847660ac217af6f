"""Numpy layer math with hand-written backward passes.

Each differentiable op has a ``*_forward`` returning ``(out, cache)`` and a
``*_backward`` taking the upstream gradient and the cache. Parameter
gradients are accumulated into the owning state's ``grad_*`` buffers.
Ops are dtype-generic: float32 for training, float64 for gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Upper bound on the lowered patch matrix built per convolution chunk.
PATCH_BUDGET_BYTES = 256 * 1024 * 1024


class ShapeError(ValueError):
    pass


@dataclass
class ConvLayerState:
    weights: np.ndarray  # C_out x C_in x k x k
    bias: np.ndarray  # C_out
    stride: int = 1
    grad_weights: np.ndarray | None = None
    grad_bias: np.ndarray | None = None

    @property
    def kernel(self) -> int:
        return int(self.weights.shape[-1])

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        if self.grad_weights is None:
            self.grad_weights = np.zeros_like(self.weights)
            self.grad_bias = np.zeros_like(self.bias)
        return [self.grad_weights, self.grad_bias]


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    eps: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"
    grad_gamma: np.ndarray | None = None
    grad_beta: np.ndarray | None = None

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        if self.grad_gamma is None:
            self.grad_gamma = np.zeros_like(self.gamma)
            self.grad_beta = np.zeros_like(self.beta)
        return [self.grad_gamma, self.grad_beta]


@dataclass
class LinearState:
    weights: np.ndarray  # out x in
    bias: np.ndarray  # out
    grad_weights: np.ndarray | None = None
    grad_bias: np.ndarray | None = None

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        if self.grad_weights is None:
            self.grad_weights = np.zeros_like(self.weights)
            self.grad_bias = np.zeros_like(self.bias)
        return [self.grad_weights, self.grad_bias]


# ---------------------------------------------------------------- convolution


def conv2d_valid_forward(x: np.ndarray, state: ConvLayerState, keep_cache: bool = True):
    """Unpadded stride-1 cross-correlation, lowered to matrix products in row chunks."""
    if state.stride != 1:
        raise ShapeError("only stride-1 convolution is supported")
    n, c, h, w = x.shape
    o, c_w, k, _ = state.weights.shape
    if c != c_w:
        raise ShapeError(f"input has {c} channels, kernel expects {c_w}")
    if h < k or w < k:
        raise ShapeError(f"kernel {k}x{k} larger than input {h}x{w}")
    oh, ow = h - k + 1, w - k + 1
    out = np.empty((n, o, oh, ow), dtype=np.result_type(x, state.weights))
    wmat = state.weights.reshape(o, c * k * k).T  # (C k k, O)
    windows = sliding_window_view(x, (k, k), axis=(2, 3))  # n c oh ow k k
    row_bytes = ow * c * k * k * x.itemsize
    rows = max(1, min(oh, PATCH_BUDGET_BYTES // max(row_bytes, 1)))
    for b in range(n):
        for r0 in range(0, oh, rows):
            r1 = min(r0 + rows, oh)
            patches = windows[b, :, r0:r1].transpose(1, 2, 0, 3, 4).reshape(-1, c * k * k)
            res = patches @ wmat  # (rows*ow, O)
            out[b, :, r0:r1] = res.T.reshape(o, r1 - r0, ow)
    out += state.bias.reshape(1, o, 1, 1)
    return out, ((x, state) if keep_cache else None)


def conv2d_valid_backward(dout: np.ndarray, cache):
    x, state = cache
    o, c, k, _ = state.weights.shape
    n, _, oh, ow = dout.shape
    gw, gb = state.grads()
    gb += dout.sum(axis=(0, 2, 3))
    windows = sliding_window_view(x, (k, k), axis=(2, 3))  # n c oh ow k k
    gw += np.einsum("nohw,nchwuv->ocuv", dout, windows, optimize=True)
    dx = np.zeros_like(x)
    for u in range(k):
        for v in range(k):
            dx[:, :, u:u + oh, v:v + ow] += np.einsum(
                "nohw,oc->nchw", dout, state.weights[:, :, u, v], optimize=True)
    return dx


# ---------------------------------------------------------------- pooling


def maxpool2d_forward(x: np.ndarray, k: int, stride: int, keep_cache: bool = True):
    """Window max with floor output sizing; ties go to the first row-major position."""
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeError(f"pool window {k}x{k} larger than input {h}x{w}")
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    span_h = (oh - 1) * stride + 1
    span_w = (ow - 1) * stride + 1
    out = x[:, :, 0:span_h:stride, 0:span_w:stride].copy()
    idx = np.zeros(out.shape, dtype=np.int16) if keep_cache else None
    for u in range(k):
        for v in range(k):
            if u == 0 and v == 0:
                continue
            cand = x[:, :, u:u + span_h:stride, v:v + span_w:stride]
            if keep_cache:
                better = cand > out
                idx[better] = u * k + v
                np.copyto(out, cand, where=better)
            else:
                np.maximum(out, cand, out=out)
    return out, ((x.shape, k, stride, idx) if keep_cache else None)


def maxpool2d_backward(dout: np.ndarray, cache):
    shape, k, stride, idx = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    oh, ow = dout.shape[2:]
    span_h = (oh - 1) * stride + 1
    span_w = (ow - 1) * stride + 1
    for u in range(k):
        for v in range(k):
            hit = idx == u * k + v
            if hit.any():
                # Windows overlap when stride < k, so accumulate per offset.
                dx[:, :, u:u + span_h:stride, v:v + span_w:stride] += np.where(hit, dout, 0)
    return dx


def adaptive_avg_pool2d_forward(x: np.ndarray, out_h: int, out_w: int, keep_cache: bool = True):
    n, c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise ShapeError("adaptive pool output must be at least 1x1")
    if out_h > h or out_w > w:
        raise ShapeError(f"adaptive pool target {out_h}x{out_w} exceeds input {h}x{w}")
    rows = _adaptive_bounds(h, out_h)
    cols = _adaptive_bounds(w, out_w)
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    for i, (a, b) in enumerate(rows):
        for j, (p, q) in enumerate(cols):
            out[:, :, i, j] = x[:, :, a:b, p:q].mean(axis=(2, 3))
    return out, ((x.shape, rows, cols) if keep_cache else None)


def adaptive_avg_pool2d_backward(dout: np.ndarray, cache):
    shape, rows, cols = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    for i, (a, b) in enumerate(rows):
        for j, (p, q) in enumerate(cols):
            dx[:, :, a:b, p:q] += dout[:, :, i:i + 1, j:j + 1] / ((b - a) * (q - p))
    return dx


def _adaptive_bounds(size: int, out: int) -> list[tuple[int, int]]:
    return [((i * size) // out, -((-(i + 1) * size) // out)) for i in range(out)]


# ---------------------------------------------------------------- pointwise


def relu_forward(x: np.ndarray, keep_cache: bool = True, inplace: bool = False):
    mask = (x > 0) if keep_cache else None
    out = np.maximum(x, 0, out=x if inplace else None)
    return out, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray):
    return dout * mask


def batchnorm2d_forward(x: np.ndarray, state: BatchNormState, keep_cache: bool = True,
                        inplace: bool = False):
    c = x.shape[1]
    shape = (1, c, 1, 1)
    if state.mode == "eval":
        if state.running_mean is None or state.running_var is None:
            raise ValueError("batchnorm running statistics are not initialized")
        scale = (state.gamma / np.sqrt(state.running_var + state.eps)).astype(x.dtype)
        shift = (state.beta - state.running_mean * scale).astype(x.dtype)
        out = x if inplace else x.copy()
        out *= scale.reshape(shape)
        out += shift.reshape(shape)
        return out, None
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if count < 2:
        raise ValueError("train-mode batchnorm needs at least 2 values per channel")
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * state.gamma.reshape(shape) + state.beta.reshape(shape)
    m = state.momentum
    if state.running_mean is None:
        state.running_mean = np.zeros_like(mean)
        state.running_var = np.ones_like(var)
    unbiased = var * count / (count - 1)
    state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(state.gamma.dtype)
    state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(state.gamma.dtype)
    return out, ((xhat, inv_std, state) if keep_cache else None)


def batchnorm2d_backward(dout: np.ndarray, cache):
    xhat, inv_std, state = cache
    shape = (1, -1, 1, 1)
    gg, gb = state.grads()
    gg += (dout * xhat).sum(axis=(0, 2, 3))
    gb += dout.sum(axis=(0, 2, 3))
    dxhat = dout * state.gamma.reshape(shape)
    mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
    mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
    return (dxhat - mean_d - xhat * mean_dx) * inv_std.reshape(shape)


def linear_forward(x: np.ndarray, state: LinearState, keep_cache: bool = True):
    if x.ndim != 2 or x.shape[1] != state.weights.shape[1]:
        raise ShapeError(
            f"linear layer expects N x {state.weights.shape[1]}, got {x.shape}")
    out = x @ state.weights.T + state.bias
    return out, ((x, state) if keep_cache else None)


def linear_backward(dout: np.ndarray, cache):
    x, state = cache
    gw, gb = state.grads()
    gw += dout.T @ x
    gb += dout.sum(axis=0)
    return dout @ state.weights


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dout: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax given its output ``probs``."""
    return probs * (dout - (dout * probs).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient with respect to the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1
    return loss, grad / n


def sgd_step(params, grads, lr: float) -> None:
    """Plain SGD update; gradients are zeroed afterwards."""
    for p, g in zip(params, grads, strict=True):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {p.shape} and gradient {g.shape} differ")
        p -= lr * g
        g[...] = 0
