"""Adam with per-group learning rates and epoch-indexed schedules."""

from dataclasses import dataclass, field

import numpy as np

from .params import Gradients, ParamStore


@dataclass
class ScheduleSpec:
    """Learning-rate decay rule applied per epoch.

    kind 'multistep': rate = base * factor ** (#milestones <= epoch).
    kind 'exponential': rate = base * factor ** epoch.
    kind 'constant': rate = base.
    """

    kind: str = "constant"
    factor: float = 1.0
    milestones: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "multistep", "exponential"):
            raise ValueError(f"unknown schedule kind '{self.kind}'")
        if self.kind != "constant" and not self.factor > 0.0:
            raise ValueError("schedule factor must be positive")
        if self.kind == "multistep":
            ms = tuple(self.milestones)
            if any(b <= a for a, b in zip(ms, ms[1:])):
                raise ValueError("milestones must be strictly increasing")

    def at(self, base: float, epoch: int) -> float:
        if self.kind == "multistep":
            hits = sum(1 for m in self.milestones if m <= epoch)
            return base * self.factor ** hits
        if self.kind == "exponential":
            return base * self.factor ** epoch
        return base


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(store: ParamStore, grads: Gradients, state: AdamState,
              lr, active_groups: list[str],
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One Adam update over the active groups, in place.

    `lr` is either a scalar applied to every active group or a mapping
    group -> rate. Parameters outside `active_groups` are untouched even
    when a gradient entry exists for them.
    """
    active = set(active_groups)
    if isinstance(lr, dict):
        missing = active - set(lr)
        if missing:
            raise KeyError(f"no learning rate for groups {sorted(missing)}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for (g, n), p in store.items():
        if g not in active or (g, n) not in grads:
            continue
        rate = lr[g] if isinstance(lr, dict) else lr
        grad = grads.get(g, n).astype(np.float64, copy=False)
        key = (g, n)
        if key not in state.m:
            state.m[key] = np.zeros(p.shape, dtype=np.float64)
            state.v[key] = np.zeros(p.shape, dtype=np.float64)
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        mhat = m / bc1
        vhat = v / bc2
        new = p.astype(np.float64) - rate * mhat / (np.sqrt(vhat) + eps)
        store.set(g, n, new.astype(p.dtype))
