"""AdamW with decoupled weight decay and an exponential epoch schedule."""
from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from .exceptions import NumericalError


def exponential_lr(lr0: float, gamma: float, epoch: int) -> float:
    return lr0 * gamma ** epoch


def no_decay(name: str) -> bool:
    """Norm affine parameters and proxies are exempt from weight decay."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf in ("gamma", "beta") or name.startswith("proxy.")


class AdamW:
    """``p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p``.

    ``params`` is an iterable of ``(name, tensor)`` pairs; ``exempt(name)``
    selects parameters that skip the decay term.
    """

    def __init__(self, params: Iterable, lr: float = 1e-4, weight_decay: float = 5e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8, exempt: Optional[Callable[[str], bool]] = no_decay):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.exempt = exempt or (lambda name: False)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is None:
                raise NumericalError(f"parameter {name!r} has no gradient")
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for name, p in self.params:
            g = p.grad.astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = self.lr * ((m / c1) / (np.sqrt(v / c2) + self.eps))
            if self.weight_decay and not self.exempt(name):
                update = update + self.lr * self.weight_decay * p.data
            p.data = (p.data - update).astype(p.dtype, copy=False)

    def state_dict(self) -> dict:
        out = {}
        for name, _ in self.params:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out


def adamw_step(state: AdamW, grads=None) -> None:
    """Apply one update; ``grads`` optionally maps names to gradients to install first."""
    if grads is not None:
        for name, p in state.params:
            if name in grads:
                p.grad = np.asarray(grads[name])
    state.step()
