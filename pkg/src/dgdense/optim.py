"""AdamW with decoupled weight decay and the warmup + polynomial LR schedule."""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass
class AdamWState:
    """Per-parameter moments plus the shared hyperparameters."""
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.05
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state, lr=None):
    """One decoupled update: p <- p - lr*mhat/(sqrt(vhat)+eps) - lr*wd*p.

    params: dict name -> Tensor (updated in place). grads: dict name -> array;
    parameters absent from grads are skipped entirely (frozen / untouched).
    `lr` may be a float or a dict name -> float for per-group rates.
    """
    state.t += 1
    b1, b2 = state.betas
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros(p.data.size)
            state.v[name] = np.zeros(p.data.size)
        rate = lr if lr is not None else state.lr
        if isinstance(rate, dict):
            rate = rate[name]
        if rate < 0:
            raise ValueError("learning rate must be >= 0")
        flat = p.data.reshape(-1)
        kernels.adamw_update(flat, np.ascontiguousarray(g.reshape(-1)),
                             state.m[name], state.v[name], state.t,
                             rate, b1, b2, state.eps, state.weight_decay)


@dataclass
class LrSchedule:
    """Linear warmup to base_lr over [0, warmup_end], then poly decay to eta_min."""
    base_lr: float = 1e-4
    warmup_end: int = 500
    total_iters: int = 5000
    power: float = 0.9
    eta_min: float = 0.0

    def __post_init__(self):
        if not 0 < self.warmup_end < self.total_iters:
            raise ValueError("need 0 < warmup_end < total_iters")


def lr_at(schedule, t):
    """Learning rate at iteration t in [0, total_iters]."""
    if t < 0 or t > schedule.total_iters:
        raise ValueError(f"iteration {t} outside [0, {schedule.total_iters}]")
    if t <= schedule.warmup_end:
        return schedule.base_lr * (t / schedule.warmup_end)
    frac = (t - schedule.warmup_end) / (schedule.total_iters - schedule.warmup_end)
    return schedule.eta_min + (schedule.base_lr - schedule.eta_min) * (1.0 - frac) ** schedule.power
