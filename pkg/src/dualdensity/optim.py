"""Parameter updates: adaptive moment estimation with cosine decay."""

import math

import numpy as np


class Adam:
    """Standard bias-corrected adaptive-moment update.

    Holds references to the trainable parameters; callers accumulate
    gradients (forward/backward), call step(), then zero_grad().
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.requires_grad]
        if not self.params:
            raise ValueError("optimizer needs at least one trainable parameter")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def cosine_lr(step, total_steps, lr_max, lr_min):
    """Step size for global step `step` of `total_steps`, decaying from
    lr_max to exactly lr_min on the final step."""
    if total_steps <= 1:
        return lr_max
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))
