"""Adam with decoupled weight decay."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamW:
    """Adaptive moment optimizer with decoupled weight decay.

    The decay shrinks each value by ``lr * weight_decay`` before the Adam
    step, independently of the gradient statistics. Gradients are left in
    place; callers zero them between steps.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def step(self, params):
        params = list(params)
        if not params:
            return
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for p in params:
            m = self.first_moment.get(p.name)
            if m is None:
                m = self.first_moment[p.name] = np.zeros_like(p.data)
                v = self.second_moment[p.name] = np.zeros_like(p.data)
            else:
                v = self.second_moment[p.name]
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v / bias2)
            denom += self.eps
            update = (m / bias1) / denom
            value = p.data
            if self.weight_decay:
                value = value * (1.0 - self.lr * self.weight_decay)
            update *= self.lr
            p.value = value - update

    @staticmethod
    def zero_grad(params):
        for p in params:
            p.zero_grad()
