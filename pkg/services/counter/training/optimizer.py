"""
Adaptive-moment optimizer with decoupled weight decay, global-norm gradient
clipping and the step learning-rate schedule.
"""

import math
from typing import List

import numpy as np

from models.config_models import OptimizerConfig, ScheduleConfig
from tensor.autograd import Parameter


def learning_rate(base_lr: float, epoch: int, schedule: ScheduleConfig) -> float:
    """lr0 * 0.5 ** floor(epoch / E), epochs counted from 0"""
    return base_lr * 0.5 ** (epoch // schedule.halve_every)


def clip_grad_norm(params: List[Parameter], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most `max_norm`; returns the norm before clipping"""
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return total


class AdamW:
    """Decay applies to matrices and kernels only; biases, norms and tokens of rank < 2 are not decayed"""

    def __init__(self, params: List[Parameter], config: OptimizerConfig):
        self.params = params
        self.config = config
        self.lr = config.lr
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        cfg = self.config
        beta1, beta2 = cfg.betas
        self.t += 1
        correction1 = 1.0 - beta1 ** self.t
        correction2 = 1.0 - beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if cfg.weight_decay and p.ndim >= 2:
                p.data -= self.lr * cfg.weight_decay * p.data
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * p.grad
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * (p.grad * p.grad)
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
