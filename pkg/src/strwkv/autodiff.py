"""Reverse-mode differentiation on an explicit tape.

Forward values are computed eagerly.  Each differentiable primitive is an
entry in a registry holding a forward function ``f(*values, **attrs) ->
(out, ctx)`` and a backward function ``b(ctx, grad_out) -> tuple`` (one
gradient or ``None`` per input).  Custom kernels (Bi-WKV, deformable
shifting) plug in through :func:`defop` and :func:`register_custom_gradient`.

The functional wrappers at the bottom (``add``, ``matmul``, ``conv2d`` ...)
are polymorphic: called with plain arrays they just compute the value; with
at least one :class:`Var` they record onto that variable's tape.  Model code
is written once against these wrappers and serves both inference and
training.

>>> tape = Tape()
>>> x = tape.var(np.array([3.0]))
>>> grads = tape.backward(sum(x * x))
>>> grads[x.id]
array([6.])
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import tensor as tc


class AutodiffError(RuntimeError):
    pass


@dataclass
class OpDef:
    forward: Callable
    backward: Callable | None = None


_OPS: dict[str, OpDef] = {}


def defop(kind: str, forward: Callable, backward: Callable | None = None) -> None:
    if kind in _OPS:
        raise AutodiffError(f"op {kind!r} already defined")
    _OPS[kind] = OpDef(forward, backward)


def register_custom_gradient(kind: str, backward: Callable) -> None:
    """Attach ``backward`` to a previously defined op that has none yet."""
    if kind not in _OPS:
        raise AutodiffError(f"unknown op {kind!r}; define its forward with defop first")
    if _OPS[kind].backward is not None:
        raise AutodiffError(f"gradient for {kind!r} already registered")
    _OPS[kind].backward = backward


def is_registered(kind: str) -> bool:
    return kind in _OPS and _OPS[kind].backward is not None


class Var:
    __slots__ = ("value", "tape", "id", "requires_grad")
    __array_priority__ = 100

    def __init__(self, value: np.ndarray, tape: "Tape", id: int, requires_grad: bool):
        self.value = value
        self.tape = tape
        self.id = id
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def T(self):
        return transpose(self)


@dataclass
class Node:
    kind: str
    inputs: tuple  # Var ids or None
    ctx: Any
    out: int


class Tape:
    """Ordered record of executed ops; single-threaded by contract."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.vars: list[Var] = []

    def _new_var(self, value, requires_grad: bool) -> Var:
        v = Var(value, self, len(self.vars), requires_grad)
        self.vars.append(v)
        return v

    def var(self, value, requires_grad: bool = True) -> Var:
        return self._new_var(tc.as_tensor(value), requires_grad)

    def const(self, value) -> Var:
        return self._new_var(np.asarray(value), False)

    def record(self, kind: str, *inputs, **attrs) -> Var:
        if kind not in _OPS:
            raise AutodiffError(f"unknown op {kind!r}")
        ids = []
        vals = []
        needs_grad = False
        for x in inputs:
            if x is None:
                ids.append(None)
                vals.append(None)
                continue
            if isinstance(x, Var):
                if x.tape is not self:
                    raise AutodiffError("inputs belong to different tapes")
            else:
                x = self.const(x)
            ids.append(x.id)
            vals.append(x.value)
            needs_grad |= x.requires_grad
        out, ctx = _OPS[kind].forward(*vals, **attrs)
        v = self._new_var(out, needs_grad)
        if needs_grad:
            self.nodes.append(Node(kind, tuple(ids), ctx, v.id))
        return v

    def backward(self, loss: Var) -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss`` for every requires-grad variable."""
        if loss.tape is not self:
            raise AutodiffError("loss belongs to a different tape")
        if loss.value.size != 1:
            raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.get(node.out)
            if g is None:
                continue
            op = _OPS[node.kind]
            if op.backward is None:
                raise AutodiffError(f"no gradient registered for op {node.kind!r}")
            in_grads = op.backward(node.ctx, g)
            for vid, gi in zip(node.inputs, in_grads):
                if vid is None or gi is None or not self.vars[vid].requires_grad:
                    continue
                if gi.shape != self.vars[vid].shape:
                    raise AutodiffError(
                        f"{node.kind}: gradient shape {gi.shape} != input shape {self.vars[vid].shape}")
                if vid in grads:
                    grads[vid] = grads[vid] + gi
                else:
                    grads[vid] = gi
        for v in self.vars:
            if v.requires_grad and v.id not in grads:
                grads[v.id] = np.zeros_like(v.value)
        return grads

    def grad(self, loss: Var, wrt) -> list[np.ndarray]:
        grads = self.backward(loss)
        return [grads[v.id] for v in wrt]


def find_tape(args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise AutodiffError("inputs belong to different tapes")
    return tape


# observers called as hook(kind, input_values, attrs, output) after every op
OP_HOOKS: list[Callable] = []


def apply(kind: str, *args, **attrs):
    """Run op ``kind``: record on the tape of any Var argument, else evaluate."""
    tape = find_tape(args)
    if tape is None:
        out = _OPS[kind].forward(*args, **attrs)[0]
    else:
        out = tape.record(kind, *args, **attrs)
    if OP_HOOKS:
        vals = [value(a) for a in args]
        for hook in OP_HOOKS:
            hook(kind, vals, attrs, value(out))
    return out


def value(x):
    return x.value if isinstance(x, Var) else x


# ---------------------------------------------------------------- primitives

def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _shape(x):
    return np.shape(x)


def _add_f(a, b):
    return tc.add(a, b), (_shape(a), _shape(b))


def _add_b(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), _unbroadcast(g, sb)


def _sub_f(a, b):
    return tc.check_finite(np.subtract(a, b), "sub"), (_shape(a), _shape(b))


def _sub_b(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), -_unbroadcast(g, sb)


def _mul_f(a, b):
    return tc.mul(a, b), (a, b)


def _mul_b(ctx, g):
    a, b = ctx
    return _unbroadcast(g * b, _shape(a)), _unbroadcast(g * a, _shape(b))


def _div_f(a, b):
    out = tc.check_finite(np.divide(a, b), "div")
    return out, (a, b, out)


def _div_b(ctx, g):
    a, b, out = ctx
    return _unbroadcast(g / b, _shape(a)), _unbroadcast(-g * out / b, _shape(b))


def _neg_f(a):
    return -a, None


def _matmul_f(a, w):
    return tc.matmul(a, w), (a, w)


def _matmul_b(ctx, g):
    a, w = ctx
    return g @ w.T, a.T @ g


def _conv2d_f(x, w, b=None, stride=1, pad=0):
    return tc.conv2d(x, w, b, stride, pad), (x, w, b is not None, stride, pad)


def _conv2d_b(ctx, g):
    x, w, has_b, stride, pad = ctx
    k = w.shape[2]
    ho, wo = g.shape[1:]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    dxp = np.zeros_like(xp, dtype=np.result_type(x, g))
    dw = np.zeros_like(w, dtype=np.result_type(w, g))
    for dy, dx, patch in tc._conv_taps(xp, k, stride, ho, wo):
        dw[:, :, dy, dx] = np.tensordot(g, patch, axes=([1, 2], [1, 2]))
        dxp[:, dy:dy + stride * (ho - 1) + 1:stride, dx:dx + stride * (wo - 1) + 1:stride] += \
            np.tensordot(w[:, :, dy, dx].T, g, axes=1)
    dx_ = dxp[:, pad:pad + x.shape[1], pad:pad + x.shape[2]] if pad else dxp
    db = g.sum(axis=(1, 2)) if has_b else None
    return dx_.astype(x.dtype), dw.astype(w.dtype), db


def _layer_norm_f(x, gamma, beta, eps=1e-5):
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(((x64 - mu) ** 2).mean(axis=1, keepdims=True) + eps)
    xhat = (x64 - mu) * inv
    out = (xhat * gamma + beta).astype(np.result_type(x, gamma))
    return tc.check_finite(out, "layer_norm"), (xhat, inv, gamma, x.dtype)


def _layer_norm_b(ctx, g):
    xhat, inv, gamma, dt = ctx
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    dxhat = g * gamma
    dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx.astype(dt), dgamma.astype(gamma.dtype), dbeta.astype(gamma.dtype)


def _sigmoid_f(x):
    s = tc.sigmoid(x)
    return s, s


def _sqrelu_f(x):
    return tc.squared_relu(x), x


def _relu_f(x):
    return np.maximum(x, 0), x


def _exp_f(x):
    y = tc.check_finite(np.exp(x), "exp")
    return y, y


def _sqrt_f(x):
    y = np.sqrt(x)
    return tc.check_finite(y, "sqrt"), y


def _sqrt_b(y, g):
    # subgradient 0 at the origin keeps ||a - a|| differentiable
    safe = np.where(y > 0, y, 1.0)
    return (np.where(y > 0, g / (2 * safe), 0.0),)


def _softplus_f(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0), x


def _sum_f(x, axis=None, keepdims=False):
    return np.sum(x, axis=axis, keepdims=keepdims), (x.shape, axis, keepdims)


def _expand_back(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def _sum_b(ctx, g):
    shape, axis, keepdims = ctx
    return (_expand_back(g, shape, axis, keepdims),)


def _mean_f(x, axis=None, keepdims=False):
    out = np.mean(x, axis=axis, keepdims=keepdims)
    n = x.size // max(np.size(out), 1)
    return out, (x.shape, axis, keepdims, n)


def _mean_b(ctx, g):
    shape, axis, keepdims, n = ctx
    return (_expand_back(g, shape, axis, keepdims) / n,)


def _reshape_f(x, shape=None):
    return x.reshape(shape), x.shape


def _transpose_f(x, axes=None):
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    return np.ascontiguousarray(x.transpose(axes)), axes


def _take_f(x, idx=None, axis=0):
    return np.take(x, idx, axis=axis), (x.shape, x.dtype, idx, axis)


def _take_b(ctx, g):
    shape, dt, idx, axis = ctx
    out = np.zeros(shape, dtype=np.result_type(dt, g))
    gm = np.moveaxis(g, axis, 0)
    om = np.moveaxis(out, axis, 0)
    np.add.at(om, idx, gm)
    return (out,)


def _concat_f(*xs, axis=0):
    return np.concatenate(xs, axis=axis), ([x.shape[axis] for x in xs], axis)


def _concat_b(ctx, g):
    sizes, axis = ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _bilinear_f(x, ys, xs):
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    taps = tc.bilinear_taps(x.shape[1], x.shape[2], ys, xs)
    return tc.bilinear_gather(x, ys, xs, taps), (x, taps, ys.shape)


def bilinear_grads(x: np.ndarray, taps: tc.BilinearTaps, g: np.ndarray):
    """Adjoint of :func:`tensor.bilinear_gather` for values and coordinates."""
    c, h, w = x.shape
    flat = x.reshape(c, h * w)
    dflat = np.zeros((c, h * w), dtype=np.float64)
    g2 = g.reshape(c, -1)
    fy = taps.fy.reshape(-1)
    fx = taps.fx.reshape(-1)
    # d weight / d y and d weight / d x for corners (0,0), (0,1), (1,0), (1,1)
    dwy = (-(1 - fx), -fx, (1 - fx), fx)
    dwx = (-(1 - fy), (1 - fy), -fy, fy)
    dys = np.zeros(fy.shape)
    dxs = np.zeros(fx.shape)
    # scatter-add for every channel at once: channel c owns bins [c*h*w, (c+1)*h*w)
    base = (np.arange(c) * (h * w))[:, None]
    for n in range(4):
        idx = taps.idx[n].reshape(-1)
        wgt = taps.wgt[n].reshape(-1)
        ok = taps.valid[n].reshape(-1)
        dflat += np.bincount((base + idx).ravel(), weights=(g2 * wgt).ravel(),
                             minlength=c * h * w).reshape(c, h * w)
        gv = np.einsum("cs,cs->s", g2, flat[:, idx]) * ok
        dys += gv * dwy[n]
        dxs += gv * dwx[n]
    return dflat.reshape(c, h, w), dys, dxs


def _bilinear_b(ctx, g):
    x, taps, shape = ctx
    dx, dys, dxs = bilinear_grads(x, taps, g)
    return dx.astype(x.dtype), dys.reshape(shape), dxs.reshape(shape)


def _unshuffle_f(x, r=2):
    return tc.pixel_unshuffle(x, r), r


def _shuffle_f(x, r=2):
    return tc.pixel_shuffle(x, r), r


defop("add", _add_f, _add_b)
defop("sub", _sub_f, _sub_b)
defop("mul", _mul_f, _mul_b)
defop("div", _div_f, _div_b)
defop("neg", _neg_f, lambda ctx, g: (-g,))
defop("matmul", _matmul_f, _matmul_b)
defop("conv2d", _conv2d_f, _conv2d_b)
defop("layer_norm", _layer_norm_f, _layer_norm_b)
defop("sigmoid", _sigmoid_f, lambda s, g: (g * s * (1 - s),))
defop("squared_relu", _sqrelu_f, lambda x, g: (g * 2 * np.maximum(x, 0),))
defop("relu", _relu_f, lambda x, g: (g * (x > 0),))
defop("exp", _exp_f, lambda y, g: (g * y,))
defop("sqrt", _sqrt_f, _sqrt_b)
defop("softplus", _softplus_f, lambda x, g: (g * tc.sigmoid(x),))
defop("sum", _sum_f, _sum_b)
defop("mean", _mean_f, _mean_b)
defop("reshape", _reshape_f, lambda shape, g: (g.reshape(shape),))
defop("transpose", _transpose_f, lambda axes, g: (np.ascontiguousarray(g.transpose(np.argsort(axes))),))
defop("take", _take_f, _take_b)
defop("concat", _concat_f, _concat_b)
defop("bilinear_sample", _bilinear_f, _bilinear_b)
defop("pixel_unshuffle", _unshuffle_f, lambda r, g: (tc.pixel_shuffle(g, r),))
defop("pixel_shuffle", _shuffle_f, lambda r, g: (tc.pixel_unshuffle(g, r),))


# ---------------------------------------------------------- functional API

def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def div(a, b):
    return apply("div", a, b)


def neg(a):
    return apply("neg", a)


def matmul(a, w):
    return apply("matmul", a, w)


def conv2d(x, w, b=None, stride=1, pad=0):
    return apply("conv2d", x, w, b, stride=stride, pad=pad)


def layer_norm(x, gamma, beta, eps=1e-5):
    return apply("layer_norm", x, gamma, beta, eps=eps)


def sigmoid(x):
    return apply("sigmoid", x)


def squared_relu(x):
    return apply("squared_relu", x)


def relu(x):
    return apply("relu", x)


def exp(x):
    return apply("exp", x)


def sqrt(x):
    return apply("sqrt", x)


def softplus(x):
    return apply("softplus", x)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    return apply("sum", x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return apply("mean", x, axis=axis, keepdims=keepdims)


def reshape(x, shape):
    return apply("reshape", x, shape=tuple(shape))


def transpose(x, axes=None):
    return apply("transpose", x, axes=axes)


def take(x, idx, axis=0):
    return apply("take", x, idx=np.asarray(idx), axis=axis)


def concat(xs, axis=0):
    return apply("concat", *xs, axis=axis)


def bilinear_sample(x, ys, xs):
    return apply("bilinear_sample", x, ys, xs)


def pixel_unshuffle(x, r=2):
    return apply("pixel_unshuffle", x, r=r)


def pixel_shuffle(x, r=2):
    return apply("pixel_shuffle", x, r=r)


def square(x):
    return mul(x, x)


def channel_stats(x):
    """Differentiable per-channel (mean, std) of ``[C,H,W]`` or ``[T,C]``."""
    if x.ndim == 3:
        flat = reshape(x, (x.shape[0], -1))
        axis = 1
    else:
        flat = x
        axis = 0
    mu = mean(flat, axis=axis, keepdims=True)
    var = mean(square(sub(flat, mu)), axis=axis)
    std = sqrt(add(var, tc.STD_EPS))
    return reshape(mu, (x.shape[0] if x.ndim == 3 else x.shape[1],)), std


def rms(x):
    """Root-mean-square over all elements, the norm used by the losses."""
    return sqrt(mean(square(x)))
