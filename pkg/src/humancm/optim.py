"""Gradients, Adam, the step-decay learning-rate schedule and EMA targets.

Reverse-mode derivatives come from torch autograd over the functional
denoiser; everything else here is written out explicitly so the update
rules are visible and testable.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import torch

from .denoiser import DenoiserParams
from .errors import InvalidArgument, NumericalError


def grad(loss_fn: Callable[[DenoiserParams], torch.Tensor], params: DenoiserParams):
    """Return (loss value, gradients) of ``loss_fn`` at ``params``.

    ``loss_fn`` receives a differentiable copy of the parameters; the
    originals are never attached to a graph.
    """
    live = params.clone().requires_grad_(True)
    loss = loss_fn(live)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss {value}")
    names = list(live.tensors)
    gs = torch.autograd.grad(loss, [live.tensors[n] for n in names], allow_unused=True)
    out = OrderedDict()
    for n, g in zip(names, gs):
        out[n] = torch.zeros_like(params.tensors[n]) if g is None else g.detach()
    return value, out


def clip_grad_norm(grads, max_norm: float) -> float:
    total = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g.mul_(scale)
    return total


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: DenoiserParams, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        zeros = OrderedDict((k, torch.zeros_like(v)) for k, v in params.tensors.items())
        return cls(zeros, OrderedDict((k, z.clone()) for k, z in zeros.items()), 0, beta1, beta2, eps)


@torch.no_grad()
def adam_step(params: DenoiserParams, grads, state: AdamState, lr: float):
    """Bias-corrected Adam. Updates ``params`` and ``state`` in place and returns both."""
    for name, g in grads.items():
        if not bool(torch.isfinite(g).all()):
            raise NumericalError(f"non-finite gradient in {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        m_hat = m / c1
        v_hat = v / c2
        params.tensors[name].sub_(lr * m_hat / (v_hat.sqrt() + state.eps))
    return params, state


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 3e-4
    decay_factor: float = 0.9
    decay_every: int = 75

    def __post_init__(self):
        if not self.base_lr > 0:
            raise InvalidArgument("base_lr must be > 0")
        if not 0 < self.decay_factor <= 1:
            raise InvalidArgument("decay_factor must lie in (0, 1]")
        if self.decay_every < 1:
            raise InvalidArgument("decay_every must be >= 1")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise InvalidArgument("epoch must be >= 0")
    return schedule.base_lr * schedule.decay_factor ** (epoch // schedule.decay_every)


@torch.no_grad()
def ema_update(target: DenoiserParams, online: DenoiserParams, rho: float) -> DenoiserParams:
    """target <- rho * target + (1 - rho) * online, in place."""
    if not 0.0 <= rho <= 1.0:
        raise InvalidArgument(f"EMA rate must lie in [0, 1], got {rho}")
    for name, t in target.tensors.items():
        o = online.tensors[name]
        if t.shape != o.shape:
            raise InvalidArgument(f"shape mismatch for {name}: {tuple(t.shape)} vs {tuple(o.shape)}")
        # plain products so the result equals rho * t + (1 - rho) * o evaluated by hand
        t.copy_(rho * t + (1.0 - rho) * o)
    return target


@dataclass(frozen=True)
class OptimConfig:
    base_lr: float = 3e-4
    decay_factor: float = 0.9
    decay_every: int = 75
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 0.0  # 0 disables clipping

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.base_lr, self.decay_factor, self.decay_every)

    def fresh_state(self, params: DenoiserParams) -> AdamState:
        return AdamState.fresh(params, self.beta1, self.beta2, self.eps)


@dataclass
class LossHistory:
    """Per-iteration losses plus (epoch, lr, epoch-mean loss) rows."""

    iterations: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def log_epoch(self, epoch: int, lr: float, losses: list) -> None:
        self.epochs.append((epoch, lr, sum(losses) / len(losses)))

    @property
    def first(self) -> float:
        return self.epochs[0][2]

    @property
    def last(self) -> float:
        return self.epochs[-1][2]

    def to_csv(self) -> str:
        lines = ["epoch,lr,loss"]
        lines += [f"{e},{lr:.10g},{loss!r}" for e, lr, loss in self.epochs]
        return "\n".join(lines) + "\n"
