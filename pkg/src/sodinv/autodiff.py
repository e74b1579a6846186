"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

A Tape records one forward pass; Tape.backward walks the recorded nodes in
reverse creation order (a valid reverse-topological order) exactly once and
deposits gradients into the Parameters that were staged onto the tape.
"""
from __future__ import annotations

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


class Variable:
    """One node of the recorded computation graph."""

    __slots__ = ("data", "grad", "tape", "needs_grad", "_parents", "_vjp")

    def __init__(self, data, tape, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self.needs_grad = any(p.needs_grad for p in parents)
        self._parents = parents
        self._vjp = vjp if self.needs_grad else None

    @property
    def shape(self):
        return self.data.shape


class Parameter:
    """Named trainable array with a persistent gradient buffer."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0


class Tape:
    """Recorder for a single forward pass; consumed by one backward call.

    With record_params=False, staged parameters are treated as frozen
    constants: their gradients are neither computed nor deposited, which
    makes repeated input-gradient evaluations (NUTS) much cheaper.
    """

    def __init__(self, record_params: bool = True):
        self.record_params = record_params
        self._nodes = []
        self._param_leaves = []
        self._consumed = False

    def _record(self, var: Variable) -> Variable:
        self._nodes.append(var)
        return var

    def constant(self, data) -> Variable:
        return self._record(Variable(data, self))

    def input(self, data) -> Variable:
        """A differentiation target that is not a Parameter (e.g. theta)."""
        var = Variable(data, self)
        var.needs_grad = True
        return self._record(var)

    def leaf(self, param: Parameter) -> Variable:
        var = Variable(param.data, self)
        if self.record_params:
            var.needs_grad = True
            self._param_leaves.append((param, var))
        return self._record(var)

    def backward(self, loss: Variable):
        """Accumulate d(loss)/d(param) into every staged Parameter's grad."""
        if self._consumed:
            raise RuntimeError("tape already consumed; run a new forward pass")
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.data.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        self._consumed = True
        loss.grad = np.ones(())
        for node in reversed(self._nodes):
            if node.grad is None or node._vjp is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.needs_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g
        for param, leaf_var in self._param_leaves:
            if leaf_var.grad is not None:
                param.grad += leaf_var.grad


def backward(tape: Tape, loss: Variable) -> dict:
    """Run reverse mode; returns {name: grad} for parameters staged on the tape."""
    tape.backward(loss)
    return {p.name: p.grad for p, _ in tape._param_leaves}


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _wrap(tape: Tape, x):
    return x if isinstance(x, Variable) else tape.constant(x)


def add(a: Variable, b) -> Variable:
    b = _wrap(a.tape, b)
    out = Variable(a.data + b.data, a.tape, (a, b),
                   lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))
    return a.tape._record(out)


def sub(a: Variable, b) -> Variable:
    b = _wrap(a.tape, b)
    out = Variable(a.data - b.data, a.tape, (a, b),
                   lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))
    return a.tape._record(out)


def mul(a: Variable, b) -> Variable:
    b = _wrap(a.tape, b)
    out = Variable(a.data * b.data, a.tape, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.data.shape),
                              _unbroadcast(g * a.data, b.data.shape)))
    return a.tape._record(out)


def neg(a: Variable) -> Variable:
    return a.tape._record(Variable(-a.data, a.tape, (a,), lambda g: (-g,)))


def matvec(a: Variable, x: Variable) -> Variable:
    """(m, n) @ (n,) -> (m,)."""
    a = _wrap(x.tape, a)
    need_a = a.needs_grad

    def vjp(g):
        return (np.outer(g, x.data) if need_a else None, a.data.T @ g)

    out = Variable(a.data @ x.data, x.tape, (a, x), vjp)
    return x.tape._record(out)


def reshape(a: Variable, shape) -> Variable:
    old = a.data.shape
    out = Variable(a.data.reshape(shape), a.tape, (a,), lambda g: (g.reshape(old),))
    return a.tape._record(out)


def vsum(a: Variable) -> Variable:
    """Sum over all elements; returns a scalar node."""
    out = Variable(a.data.sum(), a.tape, (a,),
                   lambda g: (np.broadcast_to(g, a.data.shape).copy(),))
    return a.tape._record(out)


def gather(a: Variable, indices: np.ndarray) -> Variable:
    """Take entries of the flattened array; differentiable pure indexing."""
    idx = np.asarray(indices, dtype=np.intp)
    flat_shape = a.data.shape

    def vjp(g):
        ga = np.zeros(a.data.size)
        np.add.at(ga, idx, g)
        return (ga.reshape(flat_shape),)

    out = Variable(a.data.reshape(-1)[idx], a.tape, (a,), vjp)
    return a.tape._record(out)


def crop_last(a: Variable, length: int) -> Variable:
    """Keep the leading `length` entries of the last axis."""
    full = a.data.shape[-1]
    if length > full:
        raise ValueError(f"crop length {length} exceeds axis extent {full}")

    def vjp(g):
        pad = [(0, 0)] * (g.ndim - 1) + [(0, full - length)]
        return (np.pad(g, pad),)

    out = Variable(a.data[..., :length], a.tape, (a,), vjp)
    return a.tape._record(out)


def relu(a: Variable) -> Variable:
    mask = a.data > 0.0
    out = Variable(np.where(mask, a.data, 0.0), a.tape, (a,), lambda g: (g * mask,))
    return a.tape._record(out)


def gelu(a: Variable) -> Variable:
    """GELU, tanh approximation (smooth, keeps posterior gradients continuous)."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)

    def vjp(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return (g * d,)

    out = Variable(0.5 * x * (1.0 + t), a.tape, (a,), vjp)
    return a.tape._record(out)


def identity(a: Variable) -> Variable:
    return a


def sigmoid(a: Variable) -> Variable:
    x = a.data
    s = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Variable(s, a.tape, (a,), lambda g: (g * s * (1.0 - s),))
    return a.tape._record(out)


def softplus(a: Variable) -> Variable:
    x = a.data
    s = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Variable(np.logaddexp(0.0, x), a.tape, (a,), lambda g: (g * s,))
    return a.tape._record(out)


def log(a: Variable) -> Variable:
    out = Variable(np.log(a.data), a.tape, (a,), lambda g: (g / a.data,))
    return a.tape._record(out)


def dense(x: Variable, w: Variable, b: Variable) -> Variable:
    """Affine map (B, n) @ (m, n)^T + (m,) -> (B, m)."""
    if x.data.shape[-1] != w.data.shape[1]:
        raise ValueError(
            f"dense inner dimensions disagree: input axis 1 is {x.data.shape[-1]}, "
            f"weight axis 1 is {w.data.shape[1]}"
        )

    need_w = w.needs_grad
    need_b = b.needs_grad

    def vjp(g):
        return (g @ w.data,
                g.T @ x.data if need_w else None,
                g.sum(axis=0) if need_b else None)

    out = Variable(x.data @ w.data.T + b.data, x.tape, (x, w, b), vjp)
    return x.tape._record(out)


def _window_columns(xp: np.ndarray, K: int, stride: int, l_out: int) -> np.ndarray:
    """(B, C, Lp) -> im2col matrix (C*K, B*l_out)."""
    B, C, _ = xp.shape
    s_b, s_c, s_l = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (B, C, K, l_out), (s_b, s_c, s_l, stride * s_l))
    return win.transpose(1, 2, 0, 3).reshape(C * K, B * l_out)


def conv1d(x: Variable, w: Variable, b: Variable, stride: int, padding: int) -> Variable:
    """Cross-correlation of (B, C_in, L) with (C_out, C_in, K), zero padding."""
    B, c_in, L = x.data.shape
    c_out, c_in_w, K = w.data.shape
    if c_in != c_in_w:
        raise ValueError(f"conv1d channel mismatch: input axis 1 is {c_in}, weight axis 1 is {c_in_w}")
    if K % 2 == 0:
        raise ValueError("kernel size must be odd")
    l_out = (L + 2 * padding - K) // stride + 1
    if l_out < 1:
        raise ValueError(f"conv1d output length {l_out} < 1 for input axis 2 of {L}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    xcol = _window_columns(xp, K, stride, l_out)
    w2 = w.data.reshape(c_out, c_in * K)
    y = (w2 @ xcol).reshape(c_out, B, l_out).transpose(1, 0, 2) + b.data[:, None]

    need_x = x.needs_grad
    need_w = w.needs_grad
    need_b = b.needs_grad
    span = stride * (l_out - 1) + 1

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(c_out, B * l_out)
        gw = (g2 @ xcol.T).reshape(c_out, c_in, K) if need_w else None
        gx = None
        if need_x:
            gcol = (w2.T @ g2).reshape(c_in, K, B, l_out)
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, :, k : k + span : stride] += gcol[:, k].transpose(1, 0, 2)
            gx = gxp[:, :, padding : padding + L] if padding else gxp
        return gx, gw, g.sum(axis=(0, 2)) if need_b else None

    out = Variable(y, x.tape, (x, w, b), vjp)
    return x.tape._record(out)


def conv1d_transpose(x: Variable, w: Variable, b: Variable, stride: int,
                     padding: int, output_length: int | None = None) -> Variable:
    """Adjoint of conv1d: (B, C_in, L) with weight (C_in, C_out, K), then crop.

    With bias zero this is exactly the gradient map of the matching conv1d,
    which makes the adjoint identity hold by construction.
    """
    B, c_in, L = x.data.shape
    c_in_w, c_out, K = w.data.shape
    if c_in != c_in_w:
        raise ValueError(
            f"conv1d_transpose channel mismatch: input axis 1 is {c_in}, weight axis 0 is {c_in_w}"
        )
    l_full = (L - 1) * stride - 2 * padding + K
    target = l_full if output_length is None else output_length
    if target > l_full:
        raise ValueError(f"crop length {target} exceeds produced length {l_full}")
    span = stride * (L - 1) + 1
    w2 = w.data.reshape(c_in, c_out * K)
    x2 = np.ascontiguousarray(x.data.transpose(1, 0, 2)).reshape(c_in, B * L)
    contrib = (w2.T @ x2).reshape(c_out, K, B, L)
    zp = np.zeros((B, c_out, l_full + 2 * padding))
    for k in range(K):
        zp[:, :, k : k + span : stride] += contrib[:, k].transpose(1, 0, 2)
    z = zp[:, :, padding : padding + l_full] if padding else zp
    z = z[:, :, :target] + b.data[:, None]

    need_x = x.needs_grad
    need_w = w.needs_grad
    need_b = b.needs_grad

    def vjp(g):
        gzp = np.zeros((B, c_out, l_full + 2 * padding))
        gzp[:, :, padding : padding + target] = g
        gcol = _window_columns(gzp, K, stride, L)  # (c_out*K, B*L)
        gx = None
        if need_x:
            gx = (w2 @ gcol).reshape(c_in, B, L).transpose(1, 0, 2)
        gw = (x2 @ gcol.T).reshape(c_in, c_out, K) if need_w else None
        return gx, gw, g.sum(axis=(0, 2)) if need_b else None

    out = Variable(z, x.tape, (x, w, b), vjp)
    return x.tape._record(out)


def mse_loss(pred: Variable, target) -> Variable:
    """Mean of squared elementwise differences over every element."""
    target = _wrap(pred.tape, target)
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"mse_loss shape mismatch: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    n = diff.size

    def vjp(g):
        scaled = (2.0 / n) * g * diff
        return scaled, -scaled

    out = Variable(np.mean(diff * diff), pred.tape, (pred, target), vjp)
    return pred.tape._record(out)
