"""Motion sequences, the synthetic motion generator, and history conditioning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .spectral import DctBasis, dct_forward

FAMILIES = ("oscillator", "walker", "turn")


@dataclass
class MotionSequence:
    coords: np.ndarray  # (frames, 3J)
    joints: int

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.joints < 1:
            raise InvalidArgument("joint count must be >= 1")
        if self.coords.ndim != 2 or self.coords.shape[0] < 1 or self.coords.shape[1] != 3 * self.joints:
            raise InvalidArgument(f"coords must be (frames, {3 * self.joints}), got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise InvalidArgument("coordinates must be finite")

    @property
    def frames(self) -> int:
        return self.coords.shape[0]


@dataclass
class PredictionTask:
    history: MotionSequence
    future: MotionSequence

    def __post_init__(self):
        if self.history.joints != self.future.joints:
            raise InvalidArgument("history and future joint counts differ")

    @property
    def H(self) -> int:
        return self.history.frames

    @property
    def F(self) -> int:
        return self.future.frames

    @property
    def joints(self) -> int:
        return self.history.joints

    def full(self) -> np.ndarray:
        return np.concatenate([self.history.coords, self.future.coords], axis=0)


@dataclass
class SyntheticConfig:
    J: int = 5
    H: int = 10
    F: int = 20
    n_sequences: int = 512
    motion_families: tuple[str, ...] = FAMILIES
    amplitude: tuple[float, float] = (0.05, 0.3)
    frequency: tuple[float, float] = (0.005, 0.03)  # cycles per frame
    noise_std: float = 0.001
    offset: float = 1.0  # subject rest-pose coordinates drawn from [-offset, offset]
    n_subjects: int = 4
    jitter: float = 0.05  # per-sequence rest-pose perturbation
    seed: int = 0

    def validate(self) -> None:
        for name in ("J", "H", "F", "n_sequences", "n_subjects"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        if not self.motion_families:
            raise InvalidArgument("motion_families must not be empty")
        unknown = set(self.motion_families) - set(FAMILIES)
        if unknown:
            raise InvalidArgument(f"unknown motion families {sorted(unknown)}")
        for name in ("amplitude", "frequency"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise InvalidArgument(f"{name} range is empty: [{lo}, {hi}]")
        for name in ("noise_std", "offset", "jitter"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be >= 0")


def _oscillation(rng, cfg, t, channels):
    amp = rng.uniform(*cfg.amplitude, size=channels)
    freq = rng.uniform(*cfg.frequency, size=channels)
    phase = rng.uniform(0.0, 2 * np.pi, size=channels)
    return amp * np.sin(2 * np.pi * freq * t[:, None] + phase)


def _generate_one(rng: np.random.Generator, cfg: SyntheticConfig, family: str, subject: np.ndarray) -> np.ndarray:
    frames = cfg.H + cfg.F
    channels = 3 * cfg.J
    t = np.arange(frames, dtype=np.float64)
    rest = subject + rng.uniform(-cfg.jitter, cfg.jitter, size=channels)
    # joints of one body move together: the root displacement is shared
    root_scale = cfg.amplitude[1] / frames
    if family == "oscillator":
        x = rest + _oscillation(rng, cfg, t, channels)
    elif family == "walker":
        velocity = np.tile(rng.uniform(-root_scale, root_scale, size=3), cfg.J)
        x = rest + velocity * t[:, None] + _oscillation(rng, cfg, t, channels)
    elif family == "turn":
        v1 = np.tile(rng.uniform(-root_scale, root_scale, size=3), cfg.J)
        v2 = np.tile(rng.uniform(-root_scale, root_scale, size=3), cfg.J)
        switch = int(rng.integers(cfg.H, frames))
        seg = np.minimum(t, switch)[:, None] * v1 + np.maximum(t - switch, 0.0)[:, None] * v2
        x = rest + seg
    else:
        raise InvalidArgument(f"unknown motion family {family!r}")
    if cfg.noise_std > 0:
        x = x + rng.normal(0.0, cfg.noise_std, size=x.shape)
    return x


def generate_synthetic_dataset(cfg: SyntheticConfig) -> list[PredictionTask]:
    """Seeded synthetic motion set.

    A handful of subject rest poses is drawn first; every sequence then gets
    its own sub-seed, so the output does not depend on generation order.
    """
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    subject_seq, seq_root = root.spawn(2)
    subjects = np.random.default_rng(subject_seq).uniform(-cfg.offset, cfg.offset, size=(cfg.n_subjects, 3 * cfg.J))
    tasks = []
    for child in seq_root.spawn(cfg.n_sequences):
        rng = np.random.default_rng(child)
        family = cfg.motion_families[int(rng.integers(len(cfg.motion_families)))]
        subject = subjects[int(rng.integers(cfg.n_subjects))]
        seq = MotionSequence(_generate_one(rng, cfg, family, subject), cfg.J)
        tasks.append(split_history_future(seq, cfg.H, cfg.F))
    return tasks


def split_history_future(seq: MotionSequence, H: int, F: int) -> PredictionTask:
    if H < 1 or F < 1:
        raise InvalidArgument(f"H and F must be >= 1, got H={H}, F={F}")
    if seq.frames != H + F:
        raise InvalidArgument(f"sequence has {seq.frames} frames, expected {H + F}")
    return PredictionTask(
        MotionSequence(seq.coords[:H].copy(), seq.joints),
        MotionSequence(seq.coords[H:].copy(), seq.joints),
    )


def pad_history(history: np.ndarray, F: int) -> np.ndarray:
    """Repeat the last observed frame F times. Works on (..., H, C)."""
    history = np.asarray(history, dtype=np.float64)
    tail = np.repeat(history[..., -1:, :], F, axis=-2)
    return np.concatenate([history, tail], axis=-2)


def build_condition(history, F: int, basis: DctBasis, l: int) -> np.ndarray:
    """DCT of the replicate-padded history; accepts a MotionSequence or a raw (..., H, C) array."""
    coords = history.coords if isinstance(history, MotionSequence) else np.asarray(history, dtype=np.float64)
    if coords.shape[-2] + F != basis.n:
        raise InvalidArgument(f"history of {coords.shape[-2]} frames plus F={F} does not match basis size {basis.n}")
    return dct_forward(pad_history(coords, F), basis, l)


def stack_tasks(tasks: list[PredictionTask]) -> tuple[np.ndarray, np.ndarray]:
    """(histories (M, H, C), futures (M, F, C))."""
    return (
        np.stack([t.history.coords for t in tasks]),
        np.stack([t.future.coords for t in tasks]),
    )
