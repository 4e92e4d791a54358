"""Consistency distillation of the DDIM teacher into a one-step student.

The student f(y_n, n, w, c) = c_skip(n) * y_n + c_out(n) * F(y_n, n, w, c)
reduces to the identity at n = 0. Training matches the online network at a
noisy point y_{n+k} against the EMA target evaluated at the guided teacher
estimate of y_n, plus a reconstruction anchor towards y_0.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch

from .denoiser import DTYPE, ArchConfig, DenoiserParams, forward, init_params
from .diffusion import NoiseSchedule, ddim_step, diffusion_forward, teacher_sample, _expand
from .errors import ArtifactMismatch, InvalidArgument, NumericalError
from .latent import LatentCodec
from .optim import LossHistory, OptimConfig, adam_step, clip_grad_norm, ema_update, grad, lr_at

log = logging.getLogger(__name__)

DISTANCES = ("l2", "pseudo_huber")


@dataclass(frozen=True)
class ConsistencyConfig:
    k: int = 10
    k_mode: str = "fixed"  # "fixed": always k; "sampled": k ~ U{1..k}
    w_min: float = 0.0
    w_max: float = 1.0
    w_star: float = 1.0 / 125.0
    lam: float = 1.0 / 15.0
    rho: float = 0.95
    sigma_data: float = 0.5
    distance: str = "l2"
    huber_c: float = 1e-3
    epochs: int = 300
    batch_size: int = 32
    seed: int = 0
    sample_with_ema: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise InvalidArgument("consistency.k must be >= 1")
        if self.k_mode not in ("fixed", "sampled"):
            raise InvalidArgument("consistency.k_mode must be 'fixed' or 'sampled'")
        if not self.w_min <= self.w_max:
            raise InvalidArgument("consistency.w_min must be <= consistency.w_max")
        if self.lam < 0:
            raise InvalidArgument("consistency.lam must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidArgument("consistency.rho must lie in [0, 1]")
        if not self.sigma_data > 0:
            raise InvalidArgument("consistency.sigma_data must be > 0")
        if self.distance not in DISTANCES:
            raise InvalidArgument(f"consistency.distance must be one of {DISTANCES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("consistency.epochs and consistency.batch_size must be >= 1")

    def check_schedule(self, sched: NoiseSchedule) -> None:
        if not self.k < sched.N:
            raise InvalidArgument(f"skip interval k={self.k} must be < N={sched.N}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StudentParams:
    online: DenoiserParams
    target: DenoiserParams

    def sampling_params(self, cfg: ConsistencyConfig) -> DenoiserParams:
        return self.target if cfg.sample_with_ema else self.online


def skip_out(tau, sigma_data: float):
    """c_skip = s^2 / (tau^2 + s^2), c_out = s * tau / sqrt(tau^2 + s^2)."""
    tau = torch.as_tensor(tau, dtype=DTYPE)
    s2 = sigma_data**2
    return s2 / (tau**2 + s2), sigma_data * tau / torch.sqrt(tau**2 + s2)


def boundary_coeffs(n, sched: NoiseSchedule, sigma_data: float):
    """(c_skip, c_out) at index n with tau = n / N. Gives (1, 0) at n = 0."""
    return skip_out(torch.as_tensor(n, dtype=DTYPE) / sched.N, sigma_data)


def consistency_forward(params: DenoiserParams, y_n, n, w, c, sched: NoiseSchedule, sigma_data: float,
                        drop=None):
    y_n = torch.as_tensor(y_n, dtype=DTYPE)
    c_skip, c_out = boundary_coeffs(n, sched, sigma_data)
    out = forward(params, y_n, torch.as_tensor(n, dtype=DTYPE), w, c, drop)
    return _expand(c_skip, y_n) * y_n + _expand(c_out, y_n) * out


@torch.no_grad()
def cfg_teacher_target(y_nk, nk, n, teacher: DenoiserParams, c, w, sched: NoiseSchedule) -> torch.Tensor:
    """(1 + w) * DDIM_cond(y_{n+k}) - w * DDIM_null(y_{n+k}), both jumping n+k -> n."""
    y_nk = torch.as_tensor(y_nk, dtype=DTYPE)
    w = _expand(torch.as_tensor(w, dtype=DTYPE), y_nk)
    cond = ddim_step(y_nk, nk, n, teacher, c, sched)
    uncond = ddim_step(y_nk, nk, n, teacher, None, sched)
    return (1.0 + w) * cond - w * uncond


def distance(a: torch.Tensor, b: torch.Tensor, kind: str = "l2", huber_c: float = 1e-3) -> torch.Tensor:
    """Per-sample distance over all non-batch axes, normalized by element count."""
    sq = ((a - b) ** 2).reshape(a.shape[0], -1).mean(dim=1)
    if kind == "l2":
        return sq
    if kind == "pseudo_huber":
        return torch.sqrt(sq + huber_c**2) - huber_c
    raise InvalidArgument(f"unknown distance {kind!r}")


def combine_loss(online_out, target_out, recon_out, y0, lam: float, kind: str = "l2", huber_c: float = 1e-3):
    consistency = distance(online_out, target_out, kind, huber_c)
    recon = distance(recon_out, y0, kind, huber_c)
    return (consistency + lam * recon).mean()


@dataclass
class DistillDraws:
    """Random quantities of one distillation batch, drawn up front."""

    n: np.ndarray  # target index, (B,)
    k: np.ndarray  # skip, (B,)
    w: np.ndarray  # guidance, (B,)
    noise: np.ndarray  # for y_{n+k}
    m: np.ndarray  # reconstruction index
    recon_noise: np.ndarray

    @property
    def nk(self) -> np.ndarray:
        return self.n + self.k


def draw_batch(rng: np.random.Generator, shape: tuple, cfg: ConsistencyConfig, sched: NoiseSchedule) -> DistillDraws:
    B = shape[0]
    if cfg.k_mode == "fixed":
        k = np.full(B, cfg.k)
    else:
        k = rng.integers(1, cfg.k + 1, size=B)
    n = rng.integers(0, sched.N - k + 1)
    w = rng.uniform(cfg.w_min, cfg.w_max, size=B)
    noise = rng.standard_normal(shape)
    m = rng.integers(1, sched.N + 1, size=B)
    recon_noise = rng.standard_normal(shape)
    return DistillDraws(n, k, w, noise, m, recon_noise)


def distillation_loss(online, target, y0, c, teacher, cfg: ConsistencyConfig, sched: NoiseSchedule,
                      draws: DistillDraws, y_hat=None) -> torch.Tensor:
    """Consistency term plus lam * reconstruction term, averaged over the batch.

    Only ``online`` receives gradients. ``y_hat`` may be passed in to reuse a
    precomputed teacher estimate.
    """
    y0 = torch.as_tensor(y0, dtype=DTYPE)
    c = torch.as_tensor(c, dtype=DTYPE)
    w = torch.as_tensor(draws.w, dtype=DTYPE)
    y_nk = diffusion_forward(y0, draws.nk, draws.noise, sched)
    if y_hat is None:
        y_hat = cfg_teacher_target(y_nk, draws.nk, draws.n, teacher, c, w, sched)
    with torch.no_grad():
        target_out = consistency_forward(target, y_hat, draws.n, w, c, sched, cfg.sigma_data)
    online_out = consistency_forward(online, y_nk, draws.nk, w, c, sched, cfg.sigma_data)
    y_m = diffusion_forward(y0, draws.m, draws.recon_noise, sched)
    recon_out = consistency_forward(online, y_m, draws.m, cfg.w_star, c, sched, cfg.sigma_data)
    return combine_loss(online_out, target_out, recon_out, y0, cfg.lam, cfg.distance, cfg.huber_c)


def student_arch(teacher_arch: ArchConfig, seed: int) -> ArchConfig:
    return replace(teacher_arch, seed=seed)


def train_consistency(
    y0: np.ndarray,
    c: np.ndarray,
    teacher: DenoiserParams,
    arch: ArchConfig,
    cfg: ConsistencyConfig,
    sched: NoiseSchedule,
    optim: OptimConfig = OptimConfig(),
    on_step=None,
):
    """Distill ``teacher`` into a consistency student. Returns (StudentParams, LossHistory).

    ``on_step(iteration, student)`` is called after every Adam + EMA update.
    """
    if arch.shape_key() != teacher.arch.shape_key():
        raise ArtifactMismatch("student and teacher architectures differ")
    cfg.check_schedule(sched)
    y0 = np.asarray(y0, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    M = len(y0)
    if M == 0:
        raise InvalidArgument("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    online = init_params(arch)
    student = StudentParams(online, online.clone())
    state = optim.fresh_state(online)
    history = LossHistory()
    it = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(optim.schedule, epoch)
        order = rng.permutation(M)
        losses = []
        for start in range(0, M, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            draws = draw_batch(rng, (len(idx),) + y0.shape[1:], cfg, sched)
            yb = torch.from_numpy(y0[idx])
            cb = torch.from_numpy(c[idx])
            y_nk = diffusion_forward(yb, draws.nk, draws.noise, sched)
            y_hat = cfg_teacher_target(y_nk, draws.nk, draws.n, teacher, cb, torch.from_numpy(draws.w), sched)
            try:
                value, g = grad(
                    lambda p: distillation_loss(p, student.target, yb, cb, teacher, cfg, sched, draws, y_hat),
                    student.online,
                )
            except NumericalError as exc:
                raise NumericalError(f"distillation loss diverged at epoch {epoch}: {exc}") from exc
            if optim.clip_norm > 0:
                clip_grad_norm(g, optim.clip_norm)
            adam_step(student.online, g, state, lr)
            ema_update(student.target, student.online, cfg.rho)
            losses.append(value)
            history.iterations.append(value)
            it += 1
            if on_step is not None:
                on_step(it, student)
        history.log_epoch(epoch, lr, losses)
        if epoch % 25 == 0 or epoch == cfg.epochs - 1:
            log.info("distill epoch %d lr %.3g loss %.5f", epoch, lr, history.last)
    return student, history


def item_noise(seed: int, M: int, K: int, shape: tuple) -> np.ndarray:
    """(M, K, *shape) standard normal draws, one derived sub-seed per item."""
    children = np.random.SeedSequence(seed).spawn(M)
    return np.stack([np.random.default_rng(ch).standard_normal((K,) + tuple(shape)) for ch in children])


@torch.no_grad()
def one_step_sample(student: StudentParams, c, sched: NoiseSchedule, cfg: ConsistencyConfig,
                    codec: LatentCodec, noise) -> np.ndarray:
    """Map latent noise y_T to a future motion with a single network evaluation.

    c and noise are (B, l, C) in standardized latent space; returns (B, F, C).
    """
    params = student.sampling_params(cfg)
    y0 = consistency_forward(params, noise, sched.N, cfg.w_star, c, sched, cfg.sigma_data)
    return codec.decode(y0.numpy(), np.asarray(c))


SAMPLE_CHUNK = 256


def _chunked(fn, c, noise, chunk):
    outs = [fn(c[i : i + chunk], noise[i : i + chunk]) for i in range(0, len(c), chunk)]
    return np.concatenate(outs, axis=0)


@torch.no_grad()
def multi_sample(student: StudentParams, c, K: int, sched: NoiseSchedule, cfg: ConsistencyConfig,
                 codec: LatentCodec, seed: int = 0, chunk: int = SAMPLE_CHUNK) -> np.ndarray:
    """K one-step samples per condition: c (M, l, C) -> (M, K, F, C)."""
    if K < 1:
        raise InvalidArgument("K must be >= 1")
    c = np.asarray(c, dtype=np.float64)
    M = c.shape[0]
    noise = item_noise(seed, M, K, c.shape[1:]).reshape((M * K,) + c.shape[1:])
    out = _chunked(
        lambda cc, zz: one_step_sample(student, torch.from_numpy(cc), sched, cfg, codec, torch.from_numpy(zz)),
        np.repeat(c, K, axis=0), noise, chunk,
    )
    return out.reshape((M, K) + out.shape[1:])


@torch.no_grad()
def teacher_multi_sample(teacher: DenoiserParams, c, K: int, steps: int, sched: NoiseSchedule,
                         codec: LatentCodec, seed: int = 0, chunk: int = SAMPLE_CHUNK) -> np.ndarray:
    """K DDIM samples per condition with ``steps`` evaluations each: (M, K, F, C)."""
    if K < 1:
        raise InvalidArgument("K must be >= 1")
    c = np.asarray(c, dtype=np.float64)
    M = c.shape[0]
    noise = item_noise(seed, M, K, c.shape[1:]).reshape((M * K,) + c.shape[1:])
    out = _chunked(
        lambda cc, zz: codec.decode(teacher_sample(torch.from_numpy(zz), steps, teacher, torch.from_numpy(cc), sched).numpy(), cc),
        np.repeat(c, K, axis=0), noise, chunk,
    )
    return out.reshape((M, K) + out.shape[1:])


@torch.no_grad()
def self_consistency_stat(params: DenoiserParams, teacher: DenoiserParams, c, sched: NoiseSchedule,
                          cfg: ConsistencyConfig, seed: int = 0, n_points: int = 10) -> float:
    """Mean squared disagreement of f over pairs of points on shared DDIM trajectories.

    Each condition gets one y_T; the teacher's full-resolution conditional
    DDIM path supplies y_n at ``n_points`` evenly spaced indices in (0, N].
    """
    c = torch.as_tensor(c, dtype=DTYPE)
    y = torch.as_tensor(item_noise(seed, c.shape[0], 1, c.shape[1:])[:, 0])
    keep = {int(round(v)) for v in np.linspace(sched.N / n_points, sched.N, n_points)}
    states = {}
    n = sched.N
    states[n] = y
    while n > 0:
        y = ddim_step(y, n, n - 1, teacher, c, sched)
        n -= 1
        if n in keep:
            states[n] = y
    outs = {n: consistency_forward(params, states[n], n, cfg.w_star, c, sched, cfg.sigma_data)
            for n in sorted(keep)}
    idx = sorted(outs)
    total, count = 0.0, 0
    for i, a in enumerate(idx):
        for b in idx[i + 1 :]:
            total += float(((outs[a] - outs[b]) ** 2).mean())
            count += 1
    return total / count
