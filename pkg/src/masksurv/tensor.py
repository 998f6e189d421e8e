"""A small reverse-mode autodiff engine on top of numpy.

Only the primitives the encoder, the losses and the MLP baseline need are
implemented. Everything is float64. Each op builds its output eagerly and, if
any operand requires a gradient, records its parents plus a closure that
pushes the output gradient back to them. ``backward`` walks the recorded
graph in reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import (
    AllMaskedError,
    ContractError,
    DimensionError,
    EmptyPoolError,
    NumericError,
)

LAYER_NORM_EPS = 1e-5


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, op={self.op}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def backward(self):
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op) -> Tensor:
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw, "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: _accumulate(a, g * c), "scale")


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _node(np.where(on, a.data, 0.0), (a,), lambda g: _accumulate(a, g * on), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: _accumulate(a, g * out), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    return _node(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data), "log")


def clamp_min(a, lo: float) -> Tensor:
    """max(a, lo); the gradient is zero wherever the clamp is active."""
    a = as_tensor(a)
    keep = a.data >= lo
    return _node(np.where(keep, a.data, lo), (a,), lambda g: _accumulate(a, g * keep), "clamp_min")


# --- shape ----------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _node(out, (a,), lambda g: _accumulate(a, g.reshape(a.shape)), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: _accumulate(a, g.transpose(inv)), "transpose")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, cuts, axis=axis)):
            _accumulate(t, piece)

    return _node(out, tensors, bw, "concat")


def take(a, index) -> Tensor:
    """Numpy-style indexing (basic or advanced) with scatter-add backward."""
    a = as_tensor(a)
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        if _is_basic(index):
            full[index] = g
        else:
            np.add.at(full, index, g)
        _accumulate(a, full)

    return _node(np.array(out, dtype=np.float64), (a,), bw, "take")


def _is_basic(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in parts)


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _node(out, (a,), bw, "sum")


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        rev = np.flip(np.cumsum(np.flip(g, axis), axis), axis)
        _accumulate(a, rev)

    return _node(np.cumsum(a.data, axis=axis), (a,), bw, "cumsum")


# --- linear algebra and normalisation --------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), bw, "matmul")


def softmax_with_mask(x, mask=None) -> Tensor:
    """Softmax over the last axis; ``mask`` (broadcastable, True = keep)
    replaces excluded pre-activations by -inf so they get weight exactly 0."""
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            keep = np.broadcast_to(mask, z.shape)
        except ValueError as exc:
            raise DimensionError(f"mask {mask.shape} does not match logits {z.shape}") from exc
        if not keep.any(axis=-1).all():
            raise AllMaskedError("softmax row with every position masked")
        z = np.where(keep, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _accumulate(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _node(y, (x,), bw, "softmax")


def softmax(x) -> Tensor:
    return softmax_with_mask(x, None)


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"layer_norm gain/bias must have shape ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, n).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            dx = inv / n * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
            _accumulate(x, dx)

    return _node(xhat * gain.data + bias.data, (x, gain, bias), bw, "layer_norm")


def mean_over_masked_rows(x, mask) -> Tensor:
    """Average the rows (axis -2) of ``x`` whose mask bit is True."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise DimensionError(f"pool mask {mask.shape} does not match rows of {x.shape}")
    count = mask.sum(axis=-1)
    if np.any(count == 0):
        raise EmptyPoolError("mean over zero available rows")
    w = mask[..., None]
    denom = count[..., None].astype(np.float64)
    out = np.where(w, x.data, 0.0).sum(axis=-2) / denom

    def bw(g):
        _accumulate(x, np.where(w, (g / denom)[..., None, :], 0.0))

    return _node(out, (x,), bw, "masked_mean")


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "scale": scale,
    "softmax_with_mask": softmax_with_mask,
    "layer_norm": layer_norm,
    "relu": relu,
    "mean_over_masked_rows": mean_over_masked_rows,
    "log": log,
    "exp": exp,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
}


def primitive_forward(op: str, *inputs, mask=None, **kwargs) -> Tensor:
    """Dispatch a primitive by name."""
    try:
        fn = _PRIMITIVES[op]
    except KeyError:
        raise ContractError(f"unknown primitive {op!r}") from None
    if op in ("softmax_with_mask", "mean_over_masked_rows"):
        return fn(*inputs, mask, **kwargs)
    return fn(*inputs, **kwargs)


# --- reverse pass -----------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict:
    """Populate ``.grad`` on every node reachable from a scalar ``loss``.

    Returns a map from each leaf tensor that requires a gradient to its
    gradient array. Gradients from previous calls are discarded.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    grads = {}
    for node in order:
        if node.requires_grad and node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            grads[node] = node.grad
    return grads


def relative_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max()) if err.size else 0.0


def gradient_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5, coords=None) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and
    central differences. ``coords`` optionally restricts the check to a
    subset of flat indices."""
    if not 1e-6 <= step <= 1e-3:
        raise ContractError("step must lie in [1e-6, 1e-3]")
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    loss = f(xt)
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss in gradient check")
    analytic = backward(loss).get(xt, np.zeros_like(x0)).ravel()
    idx = range(x0.size) if coords is None else coords
    a_sel, n_sel = [], []
    for i in idx:
        xp = x0.copy().ravel()
        xp[i] += step
        fp = f(Tensor(xp.reshape(x0.shape))).data
        xp[i] -= 2 * step
        fm = f(Tensor(xp.reshape(x0.shape))).data
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite value while perturbing coordinate {i}")
        a_sel.append(analytic[i])
        n_sel.append(float((fp - fm) / (2 * step)))
    return relative_error(a_sel, n_sel)


def check_parameters(loss_fn: Callable[[], Tensor], params: dict, step: float = 1e-5,
                     max_coords: int | None = None, seed: int = 0) -> dict:
    """Gradient check of a closure over named parameter tensors.

    Each parameter is perturbed in place. Returns name -> max relative error.
    """
    loss = loss_fn()
    grads = backward(loss)
    rng = np.random.default_rng(seed)
    out = {}
    # finite differences need no graph; recording one only costs time
    flags = {name: p.requires_grad for name, p in params.items()}
    for p in params.values():
        p.requires_grad = False
    try:
        for name, p in params.items():
            out[name] = _check_one(loss_fn, name, p, grads, step, max_coords, rng)
    finally:
        for name, p in params.items():
            p.requires_grad = flags[name]
    return out


def _check_one(loss_fn, name, p, grads, step, max_coords, rng):
    g = grads.get(p, np.zeros_like(p.data)).ravel()
    flat = p.data.reshape(-1)
    if max_coords is not None and flat.size > max_coords:
        idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
    else:
        idx = np.arange(flat.size)
    numeric = np.empty(len(idx))
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(loss_fn().data)
        flat[i] = orig - step
        fm = float(loss_fn().data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite loss perturbing {name}[{i}]")
        numeric[n] = (fp - fm) / (2 * step)
    return relative_error(g[idx], numeric)
