"""Teacher diffusion model: noise schedule, forward noising, eps-prediction
training and the deterministic DDIM solver."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .denoiser import DTYPE, ArchConfig, DenoiserParams, forward, init_params
from .errors import InvalidArgument, NumericalError
from .optim import LossHistory, OptimConfig, adam_step, clip_grad_norm, grad, lr_at

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    N: int
    betas: np.ndarray  # (N,)
    alphas_cum: np.ndarray  # (N + 1,), alphas_cum[0] == 1

    def abar(self, n) -> torch.Tensor:
        """Cumulative signal factor at index ``n`` (int or (B,) integer array)."""
        return torch.as_tensor(self.alphas_cum, dtype=DTYPE)[torch.as_tensor(n, dtype=torch.long)]

    def to_dict(self) -> dict:
        return {"N": self.N, "betas": [float(b) for b in self.betas]}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return _from_betas(np.asarray(d["betas"], dtype=np.float64))


def _from_betas(betas: np.ndarray) -> NoiseSchedule:
    alphas_cum = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(len(betas), betas, alphas_cum)


def build_schedule(N: int = 100, beta_min: float = 1e-3, beta_max: float = 0.2) -> NoiseSchedule:
    """Linear betas from beta_min to beta_max over N steps."""
    if N < 1:
        raise InvalidArgument(f"N must be >= 1, got {N}")
    if not 0 < beta_min <= beta_max < 1:
        raise InvalidArgument(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    return _from_betas(np.linspace(beta_min, beta_max, N))


def _expand(a: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return a.reshape(a.shape + (1,) * (like.ndim - a.ndim))


def _check_index(n, N):
    arr = np.asarray(n)
    if np.any(arr < 0) or np.any(arr > N):
        raise InvalidArgument(f"timestep {n} outside [0, {N}]")


def diffusion_forward(y0, n, noise, sched: NoiseSchedule) -> torch.Tensor:
    """y_n = sqrt(abar_n) * y0 + sqrt(1 - abar_n) * noise. ``n`` may be per-sample."""
    _check_index(n, sched.N)
    y0 = torch.as_tensor(y0, dtype=DTYPE)
    noise = torch.as_tensor(noise, dtype=DTYPE)
    a = _expand(sched.abar(n), y0)
    return a.sqrt() * y0 + (1.0 - a).sqrt() * noise


def predict_eps(teacher: DenoiserParams, y_n, n, c, drop=None) -> torch.Tensor:
    """Teacher noise prediction; the guidance input is always 0."""
    return forward(teacher, y_n, n, 0.0, c, drop)


def ddim_update(y_n, eps, abar_n, abar_prev):
    """The two DDIM formulas for a given noise estimate (eta = 0)."""
    y0_hat = (y_n - (1.0 - abar_n).sqrt() * eps) / abar_n.sqrt()
    return abar_prev.sqrt() * y0_hat + (1.0 - abar_prev).sqrt() * eps


@torch.no_grad()
def ddim_step(y_n, n, n_prev, teacher: DenoiserParams, c, sched: NoiseSchedule) -> torch.Tensor:
    """Deterministic DDIM jump from index n to n_prev < n (indices may be per-sample)."""
    if np.any(np.asarray(n_prev) >= np.asarray(n)):
        raise InvalidArgument(f"DDIM step needs n_prev < n, got {n_prev} -> {n}")
    _check_index(n, sched.N)
    _check_index(n_prev, sched.N)
    y_n = torch.as_tensor(y_n, dtype=DTYPE)
    eps = predict_eps(teacher, y_n, torch.as_tensor(n, dtype=DTYPE), c)
    return ddim_update(y_n, eps, _expand(sched.abar(n), y_n), _expand(sched.abar(n_prev), y_n))


def sampling_grid(N: int, steps: int) -> list[int]:
    """Uniformly spaced decreasing indices N = g_0 > ... > g_steps = 0."""
    if not 1 <= steps <= N:
        raise InvalidArgument(f"steps must lie in [1, {N}], got {steps}")
    return [int(round(v)) for v in np.linspace(N, 0, steps + 1)]


@torch.no_grad()
def teacher_sample(noise, steps: int, teacher: DenoiserParams, c, sched: NoiseSchedule) -> torch.Tensor:
    """Run ``steps`` DDIM updates from y_N = noise down to index 0."""
    grid = sampling_grid(sched.N, steps)
    y = torch.as_tensor(noise, dtype=DTYPE)
    for n, n_prev in zip(grid[:-1], grid[1:]):
        y = ddim_step(y, n, n_prev, teacher, c, sched)
    return y


@dataclass(frozen=True)
class TeacherConfig:
    epochs: int = 300
    batch_size: int = 16
    p_uncond: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("teacher.epochs and teacher.batch_size must be >= 1")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise InvalidArgument("teacher.p_uncond must lie in [0, 1]")


def eps_loss(params, y0, c, n, noise, drop, sched) -> torch.Tensor:
    y_n = diffusion_forward(y0, n, noise, sched)
    eps_hat = predict_eps(params, y_n, torch.as_tensor(n, dtype=DTYPE), c, drop)
    return ((eps_hat - torch.as_tensor(noise, dtype=DTYPE)) ** 2).mean()


def train_teacher(
    y0: np.ndarray,
    c: np.ndarray,
    sched: NoiseSchedule,
    arch: ArchConfig,
    cfg: TeacherConfig = TeacherConfig(),
    optim: OptimConfig = OptimConfig(),
    on_epoch=None,
):
    """Fit an eps-predictor on standardized latents ``y0`` with conditions ``c``.

    Returns (params, LossHistory). Conditions are dropped to the null token
    with probability ``cfg.p_uncond`` so the unconditional branch is trained.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    M = len(y0)
    if M == 0:
        raise InvalidArgument("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(arch)
    state = optim.fresh_state(params)
    history = LossHistory()
    for epoch in range(cfg.epochs):
        lr = lr_at(optim.schedule, epoch)
        order = rng.permutation(M)
        losses = []
        for start in range(0, M, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            B = len(idx)
            n = rng.integers(1, sched.N + 1, size=B)
            noise = rng.standard_normal((B,) + y0.shape[1:])
            drop = rng.random(B) < cfg.p_uncond
            yb = torch.from_numpy(y0[idx])
            cb = torch.from_numpy(c[idx])
            try:
                value, g = grad(lambda p: eps_loss(p, yb, cb, n, noise, drop, sched), params)
            except NumericalError as exc:
                raise NumericalError(f"teacher loss diverged at epoch {epoch}: {exc}") from exc
            if optim.clip_norm > 0:
                clip_grad_norm(g, optim.clip_norm)
            adam_step(params, g, state, lr)
            losses.append(value)
            history.iterations.append(value)
        history.log_epoch(epoch, lr, losses)
        if on_epoch is not None:
            on_epoch(epoch, history)
        if epoch % 25 == 0 or epoch == cfg.epochs - 1:
            log.info("teacher epoch %d lr %.3g loss %.5f", epoch, lr, history.last)
    return params, history
