"""Adam, usable both as a plain optimizer and as a graph-recorded update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Tensor, add, div, mul, sqrt, sub


class NonFiniteError(ArithmeticError):
    """A loss or gradient became NaN or infinite."""


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def detach(self) -> None:
        """Cut moment estimates loose from any graph they were recorded in."""
        self.m = {k: Tensor(np.array(t.data if isinstance(t, Tensor) else t)) for k, t in self.m.items()}
        self.v = {k: Tensor(np.array(t.data if isinstance(t, Tensor) else t)) for k, t in self.v.items()}


def check_finite(grads: dict, what: str = "gradient") -> None:
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g.data))]
    if bad:
        raise NonFiniteError(f"non-finite {what} for: {', '.join(bad)}")


def adam_step(params: dict, grads: dict, state: AdamState, differentiable: bool = False) -> dict:
    """One Adam update; returns the new parameter dict.

    With ``differentiable=False`` the update is applied to fresh leaf tensors
    and nothing is recorded.  With ``differentiable=True`` every arithmetic
    step is a graph node, so the returned parameters remain functions of
    whatever the gradients depended on.
    """
    check_finite(grads)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    new = {}
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = Tensor(np.zeros_like(p.data))
            state.v[name] = Tensor(np.zeros_like(p.data))
        if differentiable:
            m = add(mul(b1, state.m[name]), mul(1.0 - b1, g))
            v = add(mul(b2, state.v[name]), mul(1.0 - b2, mul(g, g)))
            state.m[name], state.v[name] = m, v
            denom = add(sqrt(div(v, c2)), state.eps)
            new[name] = sub(p, mul(state.lr, div(div(m, c1), denom)))
        else:
            gd = g.data
            m = b1 * state.m[name].data + (1.0 - b1) * gd
            v = b2 * state.v[name].data + (1.0 - b2) * gd * gd
            state.m[name], state.v[name] = Tensor(m), Tensor(v)
            upd = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            new[name] = Tensor(p.data - upd, requires_grad=p.requires_grad)
    return new
