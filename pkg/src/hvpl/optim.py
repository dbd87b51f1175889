"""Adam with per-parameter state keyed by name."""
from __future__ import annotations

import copy

import numpy as np


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the updated parameter; ``param`` itself is not modified."""
        m = self.m.get(name, np.zeros_like(param))
        v = self.v.get(name, np.zeros_like(param))
        k = self.steps.get(name, 0) + 1
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self.m[name], self.v[name], self.steps[name] = m, v, k
        m_hat = m / (1.0 - self.beta1 ** k)
        v_hat = v / (1.0 - self.beta2 ** k)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def copy(self) -> "Adam":
        return copy.deepcopy(self)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, name: str, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return param - self.lr * grad

    def copy(self) -> "SGD":
        return SGD(self.lr)
