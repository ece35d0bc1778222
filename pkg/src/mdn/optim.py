"""Adam with bias correction, operating on named parameter dicts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9


@dataclass
class AdamState:
    """First/second moments per parameter name plus the shared step count."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, cfg: AdamConfig, lr: float | None = None) -> AdamState:
    """One in-place Adam update; deterministic given identical inputs.

    ``lr`` overrides ``cfg.lr`` so schedules can drive the rate per step.
    Missing gradients are treated as zero (the moments still decay).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    rate = cfg.lr if lr is None else lr
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        p.data -= (rate * update).astype(p.data.dtype, copy=False)
    return state


class Adam:
    """Thin stateful wrapper reading ``.grad`` off the parameters."""

    def __init__(self, params: dict[str, Tensor], cfg: AdamConfig | None = None):
        self.params = params
        self.cfg = cfg or AdamConfig()
        self.state = AdamState()

    def step(self, lr: float | None = None):
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.cfg, lr=lr)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
