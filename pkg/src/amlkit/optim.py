"""Gradient-descent parameter updates: plain SGD and adaptive moments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Node
from .exceptions import NumericError


@dataclass
class OptimizerState:
    """Update rule plus per-parameter accumulators.

    mode "plain" is vanilla gradient descent; "adaptive" keeps bias-corrected
    first/second moment estimates (beta1=0.9, beta2=0.999, eps=1e-8).
    """

    mode: str = "adaptive"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list, repr=False)
    second_moment: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.mode not in ("plain", "adaptive"):
            raise ValueError(f"unknown optimizer mode '{self.mode}'")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


def optimizer_step(state: OptimizerState, params: Sequence[Node],
                   grads: Sequence[np.ndarray]) -> None:
    """Apply one update to every parameter; params and grads align one-to-one.

    Parameter values are replaced, not mutated, so snapshots taken before the
    step stay intact.
    """
    params = list(params)
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(params) != len(grads):
        raise ValueError(f"got {len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter "
                             f"'{p.name or i}' of shape {p.value.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{p.name or i}'")

    state.step_count += 1
    lr = state.learning_rate
    if state.mode == "plain":
        for p, g in zip(params, grads):
            p.value = p.value - lr * g
        return

    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.value) for p in params]
        state.second_moment = [np.zeros_like(p.value) for p in params]
    if len(state.first_moment) != len(params):
        raise ValueError("optimizer state was initialized for a different parameter list")

    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + state.eps)
