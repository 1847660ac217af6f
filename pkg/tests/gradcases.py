"""Randomized finite-difference cases, one function per differentiable op.

Each ``case_*`` draws a small random shape, builds the scalar loss
``sum(op(inputs) * R)`` for a random projection ``R`` and returns the
worst relative error between the analytic and numeric gradients across
every input and parameter.
"""

import numpy as np

from celestine import engine
from oracles import max_rel_error, numeric_grad

H = 1e-5


def _spaced(rng, shape, gap=1e-2):
    """Distinct values at least ``gap`` apart, so max-pool has no near ties."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2) * gap + rng.uniform(-gap / 10, gap / 10, n)
    return vals.reshape(shape)


def case_conv(rng):
    n, c, o, k = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    hgt, wid = k + rng.integers(0, 4), k + rng.integers(0, 4)
    x = rng.standard_normal((n, c, hgt, wid))
    st = engine.ConvLayerState(rng.standard_normal((o, c, k, k)), rng.standard_normal(o))
    out, _ = engine.conv2d_valid_forward(x, st)
    r = rng.standard_normal(out.shape)

    def loss():
        return float((engine.conv2d_valid_forward(x, st, keep_cache=False)[0] * r).sum())

    _, cache = engine.conv2d_valid_forward(x, st)
    dx = engine.conv2d_valid_backward(r, cache)
    return max(max_rel_error(dx, numeric_grad(loss, x, H)),
               max_rel_error(st.grad_weights, numeric_grad(loss, st.weights, H)),
               max_rel_error(st.grad_bias, numeric_grad(loss, st.bias, H)))


def case_maxpool(rng):
    k = int(rng.integers(1, 4))
    s = int(rng.integers(1, 4))
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 3)),
             k + int(rng.integers(0, 5)), k + int(rng.integers(0, 5)))
    x = _spaced(rng, shape)
    out, cache = engine.maxpool2d_forward(x, k, s)
    r = rng.standard_normal(out.shape)
    dx = engine.maxpool2d_backward(r, cache)

    def loss():
        return float((engine.maxpool2d_forward(x, k, s, keep_cache=False)[0] * r).sum())

    return max_rel_error(dx, numeric_grad(loss, x, H))


def case_relu(rng):
    shape = tuple(int(d) for d in rng.integers(1, 5, size=int(rng.integers(1, 5))))
    x = rng.standard_normal(shape)
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
    out, mask = engine.relu_forward(x)
    r = rng.standard_normal(out.shape)
    dx = engine.relu_backward(r, mask)

    def loss():
        return float((engine.relu_forward(x, keep_cache=False)[0] * r).sum())

    return max_rel_error(dx, numeric_grad(loss, x, H))


def case_batchnorm(rng):
    n, c = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    # at least 4 values per channel; with 2 the output is +-1 whatever the input
    # and the true input gradient is an eps-sized residue swamped by rounding
    hgt, wid = int(rng.integers(2, 4)), int(rng.integers(2, 4))
    x = rng.standard_normal((n, c, hgt, wid)) * rng.uniform(0.5, 3) + rng.uniform(-2, 2)
    st = engine.BatchNormState(rng.uniform(0.5, 2, c), rng.standard_normal(c))
    out, cache = engine.batchnorm2d_forward(x, st)
    r = rng.standard_normal(out.shape)
    dx = engine.batchnorm2d_backward(r, cache)

    def loss():
        return float((engine.batchnorm2d_forward(x, st, keep_cache=False)[0] * r).sum())

    return max(max_rel_error(dx, numeric_grad(loss, x, H)),
               max_rel_error(st.grad_gamma, numeric_grad(loss, st.gamma, H)),
               max_rel_error(st.grad_beta, numeric_grad(loss, st.beta, H)))


def case_linear(rng):
    n, d, o = (int(v) for v in rng.integers(1, 6, size=3))
    x = rng.standard_normal((n, d))
    st = engine.LinearState(rng.standard_normal((o, d)), rng.standard_normal(o))
    out, cache = engine.linear_forward(x, st)
    r = rng.standard_normal(out.shape)
    dx = engine.linear_backward(r, cache)

    def loss():
        return float((engine.linear_forward(x, st, keep_cache=False)[0] * r).sum())

    return max(max_rel_error(dx, numeric_grad(loss, x, H)),
               max_rel_error(st.grad_weights, numeric_grad(loss, st.weights, H)),
               max_rel_error(st.grad_bias, numeric_grad(loss, st.bias, H)))


def case_adaptive_pool(rng):
    hgt, wid = int(rng.integers(1, 8)), int(rng.integers(1, 8))
    oh, ow = int(rng.integers(1, hgt + 1)), int(rng.integers(1, wid + 1))
    x = rng.standard_normal((int(rng.integers(1, 3)), int(rng.integers(1, 3)), hgt, wid))
    out, cache = engine.adaptive_avg_pool2d_forward(x, oh, ow)
    r = rng.standard_normal(out.shape)
    dx = engine.adaptive_avg_pool2d_backward(r, cache)

    def loss():
        return float((engine.adaptive_avg_pool2d_forward(x, oh, ow, keep_cache=False)[0] * r).sum())

    return max_rel_error(dx, numeric_grad(loss, x, H))


def case_softmax(rng):
    n, k = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    x = rng.standard_normal((n, k)) * 2
    p = engine.softmax(x)
    r = rng.standard_normal(p.shape)
    dx = engine.softmax_backward(r, p)

    def loss():
        return float((engine.softmax(x) * r).sum())

    return max_rel_error(dx, numeric_grad(loss, x, H))


def case_cross_entropy(rng):
    n, k = int(rng.integers(1, 6)), int(rng.integers(2, 6))
    logits = rng.standard_normal((n, k)) * 2
    labels = rng.integers(0, k, size=n)
    _, grad = engine.cross_entropy(logits, labels)

    def loss():
        return engine.cross_entropy(logits, labels)[0]

    return max_rel_error(grad, numeric_grad(loss, logits, H))


CASES = {
    "conv2d_valid": case_conv,
    "maxpool2d": case_maxpool,
    "relu": case_relu,
    "batchnorm2d": case_batchnorm,
    "linear": case_linear,
    "adaptive_avg_pool2d": case_adaptive_pool,
    "softmax": case_softmax,
    "cross_entropy": case_cross_entropy,
}


def run(op: str, trials: int, seed: int = 0) -> float:
    """Worst relative error for ``op`` over ``trials`` random cases."""
    rng = np.random.default_rng(seed)
    return max(CASES[op](rng) for _ in range(trials))
