"""Adam and the stepped exponential learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Param


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[Param], beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        state = cls(beta1=beta1, beta2=beta2, eps=eps)
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
        return state


def adam_step(params: list[Param], state: AdamState, lr: float) -> None:
    """One Adam update with bias correction; frozen params are untouched."""
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, m, v in zip(params, state.m, state.v):
        if not p.trainable:
            continue
        g = p.grad
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def lr_schedule(initial_lr: float, epoch: int, decay: float = 0.8, every: int = 2) -> float:
    """Stepped exponential decay: one factor of ``decay`` per ``every`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return initial_lr * decay ** (epoch // every)
