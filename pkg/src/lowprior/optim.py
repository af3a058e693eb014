"""AdamW with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import BIAS_BLOCKS


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    decay_exempt: tuple = tuple(sorted(BIAS_BLOCKS))

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr: must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name}: must lie in [0, 1), got {v}")
        if not self.eps > 0:
            raise ValueError(f"eps: must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay: must be >= 0, got {self.weight_decay}")
        self.decay_exempt = tuple(self.decay_exempt)


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def copy(self) -> "AdamWState":
        return AdamWState({k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()}, self.t)


def adamw_step(params: dict, grads: dict, state: AdamWState, config: OptimConfig, only=None):
    """Apply one AdamW update in place and return ``(params, state)``.

    ``only`` restricts the update to a subset of block names (frozen blocks
    keep both their values and their moments). The step counter is shared.
    """
    names = list(params) if only is None else [n for n in params if n in set(only)]
    for n in names:
        if n not in grads:
            raise ValueError(f"missing gradient for block {n!r}")
        if grads[n].shape != params[n].shape:
            raise ValueError(f"block {n!r}: gradient shape {grads[n].shape} != parameter shape {params[n].shape}")
        if not np.all(np.isfinite(grads[n])):
            raise FloatingPointError(f"non-finite gradient in block {n!r}")
    state.t += 1
    t = state.t
    b1, b2, lr, lam = config.beta1, config.beta2, config.lr, config.weight_decay
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    exempt = set(config.decay_exempt)
    for n in names:
        g = grads[n]
        m = state.m.get(n)
        v = state.v.get(n)
        if m is None:
            m = np.zeros_like(params[n])
            v = np.zeros_like(params[n])
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[n], state.v[n] = m, v
        theta = params[n]
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        if lam > 0.0 and n not in exempt:
            params[n] = theta * (1.0 - lr * lam) - update
        else:
            params[n] = theta - update
    return params, state
