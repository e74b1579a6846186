"""Layer zoo and optimizer on top of the autodiff engine: 1D convolutions,
transposed convolutions, dense layers, activations, Adam, and gradcheck."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Variable


class ParameterSet:
    """Ordered, uniquely named collection of Parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def extend(self, other: "ParameterSet"):
        for p in other:
            if p.name in self._params:
                raise ValueError(f"duplicate parameter name: {p.name}")
            self._params[p.name] = p

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self):
        for p in self:
            p.zero_grad()

    def copy_values(self) -> dict:
        return {p.name: p.data.copy() for p in self}

    def load_values(self, values: dict):
        for p in self:
            src = values[p.name]
            if src.shape != p.data.shape:
                raise ValueError(f"shape mismatch loading {p.name}: {src.shape} vs {p.data.shape}")
            p.data[...] = src


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


ACTIVATIONS = {"gelu": ad.gelu, "relu": ad.relu, "identity": ad.identity}


def activation(x: Variable, kind: str) -> Variable:
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation kind: {kind!r}") from None


class Conv1d:
    def __init__(self, name, c_in, c_out, kernel, stride, padding,
                 params: ParameterSet, rng: np.random.Generator):
        self.stride = stride
        self.padding = padding
        fan_in = c_in * kernel
        self.w = params.add(f"{name}.w", _uniform_init(rng, (c_out, c_in, kernel), fan_in))
        self.b = params.add(f"{name}.b", _uniform_init(rng, (c_out,), fan_in))

    def __call__(self, tape: Tape, x: Variable) -> Variable:
        return ad.conv1d(x, tape.leaf(self.w), tape.leaf(self.b), self.stride, self.padding)


class ConvTranspose1d:
    def __init__(self, name, c_in, c_out, kernel, stride, output_length,
                 params: ParameterSet, rng: np.random.Generator):
        self.stride = stride
        self.output_length = output_length
        fan_in = c_in * kernel
        self.w = params.add(f"{name}.w", _uniform_init(rng, (c_in, c_out, kernel), fan_in))
        self.b = params.add(f"{name}.b", _uniform_init(rng, (c_out,), fan_in))

    def __call__(self, tape: Tape, x: Variable) -> Variable:
        return ad.conv1d_transpose(x, tape.leaf(self.w), tape.leaf(self.b),
                                   self.stride, 0, self.output_length)


class Dense:
    def __init__(self, name, n_in, n_out, params: ParameterSet, rng: np.random.Generator):
        self.w = params.add(f"{name}.w", _uniform_init(rng, (n_out, n_in), n_in))
        self.b = params.add(f"{name}.b", _uniform_init(rng, (n_out,), n_in))

    def __call__(self, tape: Tape, x: Variable) -> Variable:
        return ad.dense(x, tape.leaf(self.w), tape.leaf(self.b))


class Adam:
    """Bias-corrected Adam over a ParameterSet, reading Parameter.grad."""

    def __init__(self, params: ParameterSet, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class GradcheckReport:
    passed: bool
    worst_rel_err: float
    worst_param: str
    n_checked: int


def gradcheck(loss_fn, params: ParameterSet, rng: np.random.Generator,
              n_per_param: int = 3, h: float = 1e-5, tol: float = 1e-5) -> GradcheckReport:
    """Compare reverse-mode parameter gradients against central differences.

    loss_fn must build a fresh tape from the current parameter values and
    return the scalar loss Variable.
    """
    params.zero_grad()
    loss = loss_fn()
    loss.tape.backward(loss)

    worst = 0.0
    worst_name = ""
    checked = 0
    for p in params:
        idx = rng.choice(p.data.size, size=min(n_per_param, p.data.size), replace=False)
        flat = p.data.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(loss_fn().data)
            flat[i] = orig - h
            f_minus = float(loss_fn().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            adg = p.grad.reshape(-1)[i]
            rel = abs(adg - fd) / max(abs(adg), abs(fd), 1e-2)
            checked += 1
            if rel > worst:
                worst = rel
                worst_name = p.name
    return GradcheckReport(passed=worst <= tol, worst_rel_err=worst,
                           worst_param=worst_name, n_checked=checked)
