"""Small dense-tensor reverse-mode autodiff on top of numpy.

Every op records a node holding its parents and a closure that maps the
output gradient to parent gradients. ``Tensor.backward`` walks the graph in
reverse topological order, visiting each node once.
"""

from __future__ import annotations

import contextlib
import math
import threading

import numpy as np

from .exceptions import NumericalError, ShapeError

LAYER_NORM_EPS = 1e-5

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (thread-local)."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward", self.shape, ())
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _col_sum(g2):
    # column sums of a 2-D array; a ones-vector matmul is much faster than
    # sum(axis=0) for the tall, narrow arrays the encoder produces
    return np.ones(g2.shape[0]) @ g2


def _unbroadcast(g, shape):
    if g.ndim > len(shape):
        lead = g.ndim - len(shape)
        tail = g.shape[lead:]
        g = _col_sum(g.reshape(-1, math.prod(tail))).reshape(tail)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """(..., n, k) @ (k, m); the right operand is always 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape, ())
    return _make(a.data.T, (a,), lambda g: (g.T,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: (g * (out > 0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError("concat", tensors[0].shape, t.shape)
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    basic = isinstance(idx, (int, slice)) or (
        isinstance(idx, tuple) and all(isinstance(i, (int, slice)) for i in idx)
    )

    def backward(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def broadcast_time(a, steps) -> Tensor:
    """Repeat a (B, F) tensor along a new time axis -> (B, steps, F)."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("broadcast_time", a.shape, (steps,))
    out = np.repeat(a.data[:, None, :], steps, axis=1)
    return _make(out, (a,), lambda g: (g.sum(axis=1),))


def causal_conv1d(x, weight, bias=None, dilation=1) -> Tensor:
    """Causal dilated convolution over axis 1.

    ``x`` is (B, T, C_in), ``weight`` is (K, C_in, C_out). The input is
    left-padded with ``(K - 1) * dilation`` zeros so the output keeps length T;
    tap ``k`` reads ``x[t - (K - 1 - k) * dilation]``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError("causal_conv1d", x.shape, weight.shape)
    K = weight.shape[0]
    B, T, c_in = x.shape
    c_out = weight.shape[2]
    shifts = [(K - 1 - k) * dilation for k in range(K)]
    # im2col: tap k occupies columns k*c_in .. (k+1)*c_in, so one matmul covers all taps
    cols = np.zeros((B, T, K * c_in))
    for k, sh in enumerate(shifts):
        if sh < T:
            cols[:, sh:, k * c_in : (k + 1) * c_in] = x.data[:, : T - sh]
    w_flat = weight.data.reshape(K * c_in, c_out)
    out = (cols.reshape(-1, K * c_in) @ w_flat).reshape(B, T, c_out)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError("causal_conv1d.bias", bias.shape, weight.shape)
        out += bias.data
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(-1, c_out)
        gcols = (g2 @ np.ascontiguousarray(w_flat.T)).reshape(B, T, K * c_in)
        gx = np.zeros((B, T, c_in))
        for k, sh in enumerate(shifts):
            if sh < T:
                gx[:, : T - sh] += gcols[:, sh:, k * c_in : (k + 1) * c_in]
        gw = (cols.reshape(-1, K * c_in).T @ g2).reshape(K, c_in, c_out)
        grads = [gx, gw]
        if bias is not None:
            grads.append(_col_sum(g2))
        return grads

    return _make(out, parents, backward)


def layer_norm(x, gain, bias) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != gain.shape:
        raise ShapeError("layer_norm", x.shape, gain.shape)
    n = x.shape[-1]
    avg = np.full(n, 1.0 / n)
    xhat = x.data - (x.data @ avg)[..., None]
    inv = 1.0 / np.sqrt(((xhat * xhat) @ avg)[..., None] + LAYER_NORM_EPS)
    xhat *= inv
    out = xhat * gain.data
    out += bias.data

    def backward(g):
        gxhat = g * gain.data
        proj = ((gxhat * xhat) @ avg)[..., None]
        gx = gxhat - (gxhat @ avg)[..., None]
        gx -= xhat * proj
        gx *= inv
        g2 = g.reshape(-1, n)
        return gx, _col_sum(g2 * xhat.reshape(-1, n)), _col_sum(g2)

    return _make(out, (x, gain, bias), backward)


def l2_normalize(x) -> Tensor:
    """Divide each vector along the last axis by its Euclidean norm."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norm == 0.0):
        raise NumericalError("l2_normalize received a zero-norm vector")
    y = x.data / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _make(y, (x,), backward)


def logsumexp(x, mask=None, axis=-1) -> Tensor:
    """Max-shifted log-sum-exp over ``axis``, restricted to ``mask`` entries.

    Rows whose mask is all False raise; an empty sum has no logarithm.
    """
    x = as_tensor(x)
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not np.all(mask.any(axis=axis)):
        raise NumericalError("logsumexp over an empty mask row")
    masked = np.where(mask, x.data, -np.inf)
    m = masked.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(masked - m), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    weights = e / s

    def backward(g):
        return (np.expand_dims(g, axis) * weights,)

    return _make(out, (x,), backward)


def mse(pred, target) -> Tensor:
    """Mean of squared residuals; ``target`` is treated as a constant."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    diff = pred.data - target
    n = diff.size
    return _make(np.mean(diff * diff), (pred,), lambda g: (g * 2.0 * diff / n,))


def builtins_sum(it):
    it = iter(it)
    total = next(it)
    for v in it:
        total = total + v
    return total


def gradient_check(f, params, eps=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``f`` takes no arguments and returns a scalar Tensor built from ``params``
    (a Tensor or a list of Tensors with ``requires_grad=True``). Each
    coordinate contributes ``|a - n| / (|a| + |n| + 1e-12)``.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    if isinstance(params, Tensor):
        params = [params]
    for p in params:
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise NumericalError("gradient_check: non-finite value at the base point")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"gradient_check: non-finite value at perturbed coordinate {i}")
            num = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - num) / (abs(a) + abs(num) + 1e-12))
    return worst


class Adam:
    """Adam with bias correction over a dict of named Tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {
            "step": 0,
            "m": {k: np.zeros_like(v.data) for k, v in params.items()},
            "v": {k: np.zeros_like(v.data) for k, v in params.items()},
        }

    def step(self, lr=None):
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
        adam_step(
            {k: p.data for k, p in self.params.items()},
            grads,
            self.state,
            self.lr if lr is None else lr,
            self.beta1,
            self.beta2,
            self.eps,
        )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update of numpy arrays in ``params``.

    ``state`` holds ``step`` and per-key first/second moments ``m``/``v``.
    The whole step is rejected, leaving params and state untouched, if any
    gradient is non-finite or large enough to overflow the second moment.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    for k, g in grads.items():
        if g.shape != params[k].shape or state["m"][k].shape != params[k].shape:
            raise ShapeError("adam_step", params[k].shape, g.shape)
    new_m, new_v = {}, {}
    with np.errstate(over="ignore", invalid="ignore"):
        for k, g in grads.items():
            new_m[k] = beta1 * state["m"][k] + (1.0 - beta1) * g
            new_v[k] = beta2 * state["v"][k] + (1.0 - beta2) * g * g
            if not (np.isfinite(new_m[k]).all() and np.isfinite(new_v[k]).all()):
                kind = "NaN" if np.isnan(g).any() else "non-finite or overflowing"
                raise NumericalError(f"adam_step: {kind} gradient for {k!r} (max |g| {np.nanmax(np.abs(g)):.3g})")
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k in grads:
        state["m"][k][...] = new_m[k]
        state["v"][k][...] = new_v[k]
        params[k] -= lr * (new_m[k] / c1) / (np.sqrt(new_v[k] / c2) + eps)
    return params, state
