"""Random instances for every differentiable numcore op, shared by the
gradient-check unit tests and the acceptance gate."""

from __future__ import annotations

import numpy as np

from helpers import central_difference, max_rel_error
from nursesched import numcore as nc
from nursesched.numcore import Tensor


def _away_from(x, points, gap=0.05):
    """Nudge entries so none sits within ``gap`` of a kink."""
    x = x.copy()
    for p in points:
        close = np.abs(x - p) < gap
        x[close] = p + np.sign(x[close] - p + 1e-12) * gap * 2
    return x


def _probe(rng, shape):
    return rng.normal(size=shape)


def _case(rng: np.random.Generator, name: str):
    """Return ``(inputs, fn)`` where ``fn(*tensors)`` is a scalar Tensor."""
    n = lambda *s: rng.normal(size=s)  # noqa: E731
    if name == "add":
        a, b, w = n(3, 4), n(4), _probe(rng, (3, 4))
        return [a, b], lambda x, y: ((x + y) * w).sum()
    if name == "sub":
        a, b, w = n(2, 3), n(2, 1), _probe(rng, (2, 3))
        return [a, b], lambda x, y: ((x - y) * w).sum()
    if name == "mul":
        a, b, w = n(3, 1, 4), n(2, 4), _probe(rng, (3, 2, 4))
        return [a, b], lambda x, y: ((x * y) * w).sum()
    if name == "div":
        a, b, w = n(3, 4), rng.uniform(0.5, 2.0, (3, 4)) * rng.choice([-1, 1], (3, 4)), _probe(rng, (3, 4))
        return [a, b], lambda x, y: ((x / y) * w).sum()
    if name == "neg":
        a, w = n(5), _probe(rng, (5,))
        return [a], lambda x: ((-x) * w).sum()
    if name == "tanh":
        a, w = n(4, 3), _probe(rng, (4, 3))
        return [a], lambda x: (nc.tanh(x) * w).sum()
    if name == "relu":
        a, w = _away_from(n(4, 5), [0.0]), _probe(rng, (4, 5))
        return [a], lambda x: (nc.relu(x) * w).sum()
    if name == "exp":
        a, w = n(6), _probe(rng, (6,))
        return [a], lambda x: (nc.exp(x) * w).sum()
    if name == "log":
        a, w = rng.uniform(0.2, 3.0, (3, 3)), _probe(rng, (3, 3))
        return [a], lambda x: (nc.log(x) * w).sum()
    if name == "square":
        a, w = n(2, 5), _probe(rng, (2, 5))
        return [a], lambda x: (nc.square(x) * w).sum()
    if name == "minimum":
        a = n(4, 4)
        b = a + _away_from(n(4, 4), [0.0])
        w = _probe(rng, (4, 4))
        return [a, b], lambda x, y: (nc.minimum(x, y) * w).sum()
    if name == "clip":
        a, w = _away_from(n(10) * 2, [-0.8, 1.1]), _probe(rng, (10,))
        return [a], lambda x: (nc.clip(x, -0.8, 1.1) * w).sum()
    if name == "where":
        cond = rng.random((3, 4)) < 0.5
        a, b, w = n(3, 4), n(4), _probe(rng, (3, 4))
        return [a, b], lambda x, y: (nc.where(cond, x, y) * w).sum()
    if name == "sum":
        a, w = n(3, 4, 2), _probe(rng, (3, 2))
        return [a], lambda x: (x.sum(axis=1) * w).sum()
    if name == "mean":
        a, w = n(3, 4), _probe(rng, (3, 1))
        return [a], lambda x: (x.mean(axis=1, keepdims=True) * w).sum() + x.mean()
    if name == "reshape":
        a, w = n(2, 6), _probe(rng, (3, 4))
        return [a], lambda x: (x.reshape(3, 4) * w).sum()
    if name == "transpose":
        a, w = n(2, 3, 4), _probe(rng, (4, 2, 3))
        return [a], lambda x: (x.transpose(2, 0, 1) * w).sum()
    if name == "index":
        a, w1, w2 = n(5, 4), _probe(rng, (2, 4)), _probe(rng, (3,))
        rows = np.array([0, 2, 2])
        return [a], lambda x: (x[1:3] * w1).sum() + (x[rows, 1] * w2).sum()
    if name == "concat":
        a, b, w = n(2, 3), n(2, 2), _probe(rng, (2, 5))
        return [a, b], lambda x, y: (nc.concat([x, y], axis=1) * w).sum()
    if name == "matmul":
        a, b, w = n(3, 4), n(4, 2), _probe(rng, (3, 2))
        return [a, b], lambda x, y: ((x @ y) * w).sum()
    if name == "matmul_batched":
        a, b, w = n(2, 3, 4, 5), n(2, 3, 5, 2), _probe(rng, (2, 3, 4, 2))
        return [a, b], lambda x, y: ((x @ y) * w).sum()
    if name == "matmul_weight":
        a, b, w = n(2, 3, 4), n(4, 3), _probe(rng, (2, 3, 3))
        return [a, b], lambda x, y: ((x @ y) * w).sum()
    if name == "matmul_vector":
        a, b, w = n(2, 3, 4), n(4), _probe(rng, (2, 3))
        return [a, b], lambda x, y: ((x @ y) * w).sum()
    if name == "masked_softmax":
        mask = rng.random((3, 6)) < 0.6
        mask[:, 0] = True
        a, w = n(3, 6), _probe(rng, (3, 6))
        return [a], lambda x: (nc.masked_softmax(x, mask) * w).sum()
    if name == "masked_log_softmax":
        mask = rng.random((3, 6)) < 0.6
        mask[:, -1] = True
        a, w = n(3, 6), _probe(rng, (3, 6))
        return [a], lambda x: (nc.where(mask, nc.masked_log_softmax(x, mask), 0.0) * w).sum()
    if name == "layer_norm":
        a, g, b, w = n(3, 5), n(5), n(5), _probe(rng, (3, 5))
        return [a, g, b], lambda x, gg, bb: (nc.layer_norm(x, gg, bb) * w).sum()
    if name == "mean_pool":
        pres = rng.random((2, 5)) < 0.6
        pres[:, 0] = True
        a, w = n(2, 5, 3), _probe(rng, (2, 3))
        return [a], lambda x: (nc.mean_pool(x, pres) * w).sum()
    raise KeyError(name)


OPS = (
    "add", "sub", "mul", "div", "neg", "tanh", "relu", "exp", "log", "square", "minimum", "clip",
    "where", "sum", "mean", "reshape", "transpose", "index", "concat", "matmul", "matmul_batched",
    "matmul_weight", "matmul_vector", "masked_softmax", "masked_log_softmax", "layer_norm", "mean_pool",
)


def gradcheck_op(name: str, seed: int, h: float = 1e-5) -> float:
    """Worst relative error between backward() and central differences for one random instance."""
    rng = np.random.default_rng(seed)
    inputs, fn = _case(rng, name)
    leaves = [Tensor(x, requires_grad=True) for x in inputs]
    nc.backward(fn(*leaves))
    worst = 0.0
    for x, leaf in zip(inputs, leaves):
        numeric = central_difference(lambda: fn(*[Tensor(v) for v in inputs]).item(), x, h)
        analytic = np.zeros_like(x) if leaf.grad is None else leaf.grad
        worst = max(worst, max_rel_error(analytic, numeric))
    return worst
