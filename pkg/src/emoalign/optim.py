"""First-order optimizers over lists of tensors.

Both optimizers mutate parameter ``.data`` in place and clear ``.grad``
after every step, so a forgotten ``backward`` before the next ``step``
fails loudly instead of silently reusing stale gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import Tensor


class SGD:
    """Stochastic gradient descent with classical momentum.

    v <- momentum * v + grad
    p <- p - lr * v
    """

    def __init__(self, params, lr: float, momentum: float = 0.0):
        self.params: list[Tensor] = list(params)
        if not self.params:
            raise ContractError("SGD: empty parameter list")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"SGD.step: parameter {i} has no gradient")
            v = self._velocity[i]
            v *= self.momentum
            v += p.grad
            if self.lr != 0.0:  # keep zero-lr steps bit-exact on the params
                p.data -= self.lr * v
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    """Adam with the standard bias-corrected moment estimates."""

    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        if not self.params:
            raise ContractError("Adam: empty parameter list")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self) -> None:
        self._t += 1
        b1t = 1.0 - self.beta1 ** self._t
        b2t = 1.0 - self.beta2 ** self._t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"Adam.step: parameter {i} has no gradient")
            g = p.grad
            m = self._m[i]
            v = self._v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.lr != 0.0:
                p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
