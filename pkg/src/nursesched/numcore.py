"""Dense float64 tensors with tape-free reverse-mode differentiation.

Each op records its parents and a closure that maps the output gradient to
parent gradients. ``backward`` walks the graph in reverse topological order
and accumulates into ``Tensor.grad`` of every leaf that requires a gradient.
Ops broadcast like numpy; gradients are summed back to the operand shape.
"""

from __future__ import annotations

import contextlib
import json
import math
import struct
from collections import OrderedDict
from os import PathLike
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .rng import Rng

_grad_enabled = True


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (used for rollouts and evaluation)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)
    return _make(y, (x,), lambda g: (g * (y > 0),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    return _make(
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)),
    )


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)
    return _make(np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape), _unbroadcast(np.where(cond, 0.0, g), b.shape)),
    )


# -- shape / reduction -------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), back)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=()) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, slice, np.integer)) for p in parts)


def index(x: Tensor, idx) -> Tensor:
    basic = _is_basic(idx)

    def back(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def matmul(a, b) -> Tensor:
    """Batched matrix product. ``b`` may be a vector (contracts the last axis of ``a``)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul needs at least 1-d operands, got {a.shape} and {b.shape}")
    k_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != k_b:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim == 1:
        def back_vec(g):
            ga = g[..., None] * b.data
            gb = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0)
            return ga, gb

        return _make(a.data @ b.data, (a, b), back_vec)

    if b.ndim == 2 and a.ndim > 2:
        # fold leading axes so the weight gradient is a single GEMM
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])

        def back_flat(g):
            g2 = g.reshape(-1, b.shape[1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _make((a2 @ b.data).reshape(*lead, b.shape[1]), (a, b), back_flat)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.outer(a.data, g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back)


# -- composite ops with hand-written backward --------------------------------

def masked_softmax(logits: Tensor, mask, axis: int = -1) -> Tensor:
    """Softmax restricted to ``mask``; masked entries are exactly 0."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(axis=axis).all():
        raise ValueError("masked_softmax: a distribution has no unmasked entry")
    z = np.where(mask, logits.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    p = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (logits,), back)


def masked_log_softmax(logits: Tensor, mask, axis: int = -1) -> Tensor:
    """Log of :func:`masked_softmax`; masked entries hold ``-inf`` and receive no gradient."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(axis=axis).all():
        raise ValueError("masked_log_softmax: a distribution has no unmasked entry")
    z = np.where(mask, logits.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.where(mask, np.exp(z), 0.0).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.where(mask, np.exp(out), 0.0)

    def back(g):
        g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (logits,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gg = g * gain.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True) - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), back)


def mean_pool(x: Tensor, presence) -> Tensor:
    """Mean over the token axis (second to last) counting only present tokens."""
    presence = np.asarray(presence, dtype=bool)
    counts = presence.sum(axis=-1, keepdims=True)
    if (counts == 0).any():
        raise ValueError("mean_pool: no present token")
    w = presence / counts
    return _make(
        (x.data * w[..., None]).sum(axis=-2),
        (x,),
        lambda g: (g[..., None, :] * w[..., None],),
    )


# -- differentiation ---------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every grad-requiring leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


# -- parameters and optimisation ---------------------------------------------

class ParamStore:
    """Named leaf tensors plus Adam moments."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def describe(self) -> list[tuple[str, tuple]]:
        return [(k, t.shape) for k, t in self.params.items()]

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for k, t in self.params.items():
            other.add(k, t.data.copy())
            other.m[k] = self.m[k].copy()
            other.v[k] = self.v[k].copy()
        other.step = self.step
        return other


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int, shape: tuple) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape))
    return np.array([rng.uniform(-limit, limit) for _ in range(n)]).reshape(shape)


def normal_init(rng: Rng, shape: tuple, std: float) -> np.ndarray:
    n = int(np.prod(shape))
    return np.array([rng.normal(0.0, std) for _ in range(n)]).reshape(shape)


def global_grad_norm(store: ParamStore) -> float:
    total = 0.0
    for t in store.params.values():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return math.sqrt(total)


def adam_step(
    store: ParamStore,
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clip_norm: Optional[float] = 0.5,
) -> float:
    """One Adam update after global-norm clipping. Returns the pre-clip norm."""
    for name, t in store.params.items():
        if t.grad is not None and not np.isfinite(t.grad).all():
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    norm = global_grad_norm(store)
    scale = clip_norm / norm if clip_norm is not None and norm > clip_norm else 1.0
    store.step += 1
    bc1 = 1.0 - beta1 ** store.step
    bc2 = 1.0 - beta2 ** store.step
    for name, t in store.params.items():
        m, v = store.m[name], store.v[name]
        m *= beta1
        v *= beta2
        if t.grad is not None:
            g = t.grad * scale if scale != 1.0 else t.grad
            m += (1.0 - beta1) * g
            v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v / bc2)
        denom += eps
        t.data = t.data - (lr / bc1) * m / denom
    return norm


# -- checkpoints -------------------------------------------------------------
#
# Layout (all integers little-endian):
#   8 bytes   magic b"NSCHKPT\0"
#   u32       format version
#   u32       metadata length, then that many bytes of UTF-8 JSON
#   u64       Adam step count
#   u32       parameter count, then per parameter:
#             u16 name length, name bytes, u8 ndim, ndim x u64 dims,
#             value, first moment, second moment as raw float64 arrays

MAGIC = b"NSCHKPT\0"
FORMAT_VERSION = 1


def save_checkpoint(store: ParamStore, path: str | PathLike, metadata: Optional[dict] = None) -> None:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta, struct.pack("<QI", store.step, len(store.params))]
    for name, t in store.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}Q", *t.shape))
        for arr in (t.data, store.m[name], store.v[name]):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path: str | PathLike) -> tuple[ParamStore, dict]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", buf, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(buf[off : off + meta_len].decode("utf-8"))
    off += meta_len
    step, count = struct.unpack_from("<QI", buf, off)
    off += 12
    store = ParamStore()
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + n].decode("utf-8")
        off += n
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays = []
        for _ in range(3):
            arrays.append(np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64))
            off += 8 * size
        store.add(name, arrays[0])
        store.m[name], store.v[name] = arrays[1], arrays[2]
    store.step = step
    return store, meta
