"""Adam updates and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MissingGradientError
from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


class Parameter:
    """A trainable tensor together with its Adam moment buffers."""

    def __init__(self, data, name=""):
        self.name = name
        self.value = Tensor(data, requires_grad=True)
        self.adam_m = np.zeros_like(self.value.data)
        self.adam_v = np.zeros_like(self.value.data)
        self.step_count = 0

    @property
    def shape(self):
        return self.value.shape

    def copy(self):
        twin = Parameter(self.value.data, self.name)
        twin.adam_m = self.adam_m.copy()
        twin.adam_v = self.adam_v.copy()
        twin.step_count = self.step_count
        return twin

    def reset_moments(self):
        self.adam_m[...] = 0.0
        self.adam_v[...] = 0.0
        self.step_count = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, steps={self.step_count})"


def adam_step(param: Parameter, lr: float) -> None:
    g = param.value.grad
    if g is None:
        raise MissingGradientError(f"parameter {param.name!r} has no gradient")
    param.step_count += 1
    t = param.step_count
    param.adam_m *= BETA1
    param.adam_m += (1.0 - BETA1) * g
    param.adam_v *= BETA2
    param.adam_v += (1.0 - BETA2) * g * g
    m_hat = param.adam_m / (1.0 - BETA1 ** t)
    v_hat = param.adam_v / (1.0 - BETA2 ** t)
    param.value.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    param.value.grad = None


@dataclass(frozen=True)
class LrSchedule:
    lr_max: float = 1e-4
    lr_min: float = 3e-7
    total_epochs: int = 50

    def __post_init__(self):
        if not (0 < self.lr_min < self.lr_max):
            raise ValueError(f"need 0 < lr_min < lr_max, got {self.lr_min}, {self.lr_max}")
        if self.total_epochs < 1:
            raise ValueError(f"total_epochs must be positive, got {self.total_epochs}")


def cosine_lr(schedule: LrSchedule, epoch: int) -> float:
    if not 0 <= epoch <= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    span = schedule.lr_max - schedule.lr_min
    return schedule.lr_min + 0.5 * span * (1.0 + math.cos(math.pi * epoch / schedule.total_epochs))
