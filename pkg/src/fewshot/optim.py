"""Adam optimizer with bias correction.

Learning rate 1e-4 is the training default; beta1/beta2/epsilon are the
de-facto standard values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Parameter

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus step counter."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def moments_for(self, param: Parameter) -> tuple[np.ndarray, np.ndarray]:
        if param.name not in self.m:
            self.m[param.name] = np.zeros_like(param.value)
            self.v[param.name] = np.zeros_like(param.value)
        m, v = self.m[param.name], self.v[param.name]
        if m.shape != param.value.shape:
            raise ValueError(f"moment shape {m.shape} does not match parameter "
                             f"'{param.name}' shape {param.value.shape}")
        return m, v


def adam_step(
    params: Sequence[Parameter],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    p -= lr * m_hat / (sqrt(v_hat) + eps), with m_hat, v_hat the
    bias-corrected exponential moving averages of g and g**2.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p in params:
        g = np.asarray(grads[p.name])
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter "
                             f"'{p.name}' shape {p.value.shape}")
        m, v = state.moments_for(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.value -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(
            p.value.dtype, copy=False)
    return state
