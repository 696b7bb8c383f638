"""First-order optimizers and gradient clipping."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from structpos.config import TrainConfig
from structpos.nncore.tensor import Tensor


class Optimizer:
    """Base class holding the parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float) -> None:
        if lr < 0:
            raise ValueError(f"Learning rate must be non-negative, got {lr}")
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """Plain stochastic gradient descent."""

    def step(self) -> None:
        for param in self.params:
            if param.grad is not None:
                param.data -= self.lr * param.grad


class Adam(Optimizer):
    """Adam with bias-corrected moment estimates."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for param, m, v in zip(self.params, self.m, self.v, strict=True):
            if param.grad is None:
                continue
            grad = param.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / correction1
            v_hat = v / correction2
            param.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig, params: Sequence[Tensor]) -> Optimizer:
    """Build the optimizer named in ``config``."""
    if config.optimizer == "sgd":
        return SGD(params, config.learning_rate)
    return Adam(
        params,
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
    )


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns:
        The norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-6)
        for param in params:
            if param.grad is not None:
                param.grad = param.grad * scale
    return total
