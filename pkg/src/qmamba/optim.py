"""Parameter-grouped AdamW.

The four groups carry the per-projection learning rates (3e-4 / 1e-4 / 3e-4
for in_proj / x_proj / out_proj) with zero weight decay, while everything
classical trains at 1e-3 with decoupled decay 0.01. A classical-backend
projection still lives in its projection group, so backend choice is the only
variable between the baseline and the hybrid run.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .mamba import GROUPS, Param

__all__ = ["ParamGroup", "DEFAULT_GROUPS", "AdamW", "default_groups"]


@dataclass(frozen=True)
class ParamGroup:
    name: str
    lr: float
    weight_decay: float

    def __post_init__(self):
        if self.name not in GROUPS:
            raise ConfigError(f"unknown parameter group {self.name!r}")
        if self.lr <= 0:
            raise ConfigError(f"group {self.name}: lr must be positive")
        if self.weight_decay < 0:
            raise ConfigError(f"group {self.name}: weight_decay must be >= 0")


DEFAULT_GROUPS = {
    "in_proj": ParamGroup("in_proj", 3e-4, 0.0),
    "x_proj": ParamGroup("x_proj", 1e-4, 0.0),
    "out_proj": ParamGroup("out_proj", 3e-4, 0.0),
    "classical": ParamGroup("classical", 1e-3, 0.01),
}


def default_groups(
    classical_lr: float | None = None, lr_scale: float = 1.0
) -> dict[str, ParamGroup]:
    """The contract lr/decay table, with an optional classical-lr override and
    a uniform scale for desk-sized runs (ratios between groups unchanged)."""
    groups = dict(DEFAULT_GROUPS)
    if classical_lr is not None:
        groups["classical"] = ParamGroup("classical", classical_lr, 0.01)
    if lr_scale != 1.0:
        groups = {
            name: ParamGroup(name, g.lr * lr_scale, g.weight_decay)
            for name, g in groups.items()
        }
    return groups


class AdamW:
    """Decoupled-weight-decay Adam over named parameter groups."""

    def __init__(
        self,
        params: list[Param],
        groups: dict[str, ParamGroup] | None = None,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        grad_clip: float | None = None,
    ):
        self.groups = dict(DEFAULT_GROUPS if groups is None else groups)
        for p in params:
            if p.group not in self.groups:
                raise ConfigError(f"parameter {p.name} has no group {p.group!r}")
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = grad_clip
        self.step_count = 0
        self._m = [np.zeros_like(p.tensor.data) for p in self.params]
        self._v = [np.zeros_like(p.tensor.data) for p in self.params]

    def _gather_grads(self) -> list[np.ndarray]:
        grads = []
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                g = np.zeros_like(p.tensor.data)
            if g.shape != p.tensor.data.shape:
                raise ConfigError(
                    f"{p.name}: gradient shape {g.shape} != parameter shape "
                    f"{p.tensor.data.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {p.name}")
            grads.append(g)
        return grads

    def step(self) -> None:
        """One AdamW update from the gradients currently on the tensors."""
        grads = self._gather_grads()
        if self.grad_clip is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if total > self.grad_clip:
                scale = self.grad_clip / total
                grads = [g * scale for g in grads]
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            group = self.groups[p.group]
            if group.weight_decay > 0.0:
                p.tensor.data *= 1.0 - group.lr * group.weight_decay
            m = self._m[i]
            v = self._v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.tensor.data -= group.lr * update

    def zero_grads(self) -> None:
        for p in self.params:
            p.tensor.zero_grad()
