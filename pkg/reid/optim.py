"""Adam with bias correction, updating a dict of float64 arrays in place."""
from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from shared.errors import NonFiniteGradientError, ShapeError


class Adam:
    def __init__(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        # first / second moment estimates, keyed like the parameter dict
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """One update. Raises NonFiniteGradientError before touching anything."""
        for k in params:
            g = grads.get(k)
            if g is None:
                continue
            if g.shape != params[k].shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter {k} shape {params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(k)

        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        step_size = self.lr / bc1

        for k in params:
            g = grads.get(k)
            if g is None:
                continue
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])

            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)

            denom = np.sqrt(self.v[k] * (1.0 / bc2)) + self.epsilon
            params[k] -= step_size * self.m[k] / denom

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for k in sorted(self.m):
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, t: int, arrays: Optional[Dict[str, np.ndarray]]) -> None:
        self.t = int(t)
        self.m, self.v = {}, {}
        for key, value in (arrays or {}).items():
            _, which, name = key.split(".", 2)
            target = self.m if which == "m" else self.v
            target[name] = np.array(value, dtype=np.float64)
