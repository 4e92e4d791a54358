"""Latent encoder/decoder around the truncated DCT of full motion sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, InvalidState
from .motion import PredictionTask, build_condition, stack_tasks
from .spectral import build_dct_basis, dct_forward, dct_inverse


@dataclass
class LatentNorm:
    """Per-row-index mean/std of DCT coefficients, pooled over samples and channels."""

    mean: np.ndarray  # (l,)
    std: np.ndarray  # (l,)

    @classmethod
    def fit(cls, coeffs: np.ndarray) -> "LatentNorm":
        coeffs = np.asarray(coeffs, dtype=np.float64)
        mean = coeffs.mean(axis=(0, 2))
        std = np.maximum(coeffs.std(axis=(0, 2)), 1e-8)
        return cls(mean, std)

    def standardize(self, y: np.ndarray) -> np.ndarray:
        return (y - self.mean[:, None]) / self.std[:, None]

    def destandardize(self, z: np.ndarray) -> np.ndarray:
        return z * self.std[:, None] + self.mean[:, None]

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict | None) -> "LatentNorm":
        if not d:
            raise InvalidState("normalization statistics are missing")
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


class LatentCodec:
    """Maps (history, future) pairs to standardized latents and back.

    With ``residual=True`` the latent is the DCT of the sequence minus the
    DCT of the replicate-padded history (the raw condition), i.e. the
    spectral displacement of the future from the last observed pose. The
    condition is added back when decoding, so a zero latent decodes to the
    "hold the last pose" prediction.
    """

    def __init__(self, H: int, F: int, l: int, norm: LatentNorm | None = None,
                 cond_norm: LatentNorm | None = None, residual: bool = True):
        if not 1 <= l <= H + F:
            raise InvalidArgument(f"latent rows l={l} must lie in [1, {H + F}]")
        self.H, self.F, self.l = H, F, l
        self.basis = build_dct_basis(H + F)
        self.norm = norm
        self.cond_norm = cond_norm
        self.residual = residual

    def _require_norm(self) -> LatentNorm:
        if self.norm is None or self.cond_norm is None:
            raise InvalidState("latent codec has no normalization statistics")
        return self.norm

    def stats(self) -> dict:
        self._require_norm()
        return {"residual": self.residual, "latent": self.norm.to_dict(), "condition": self.cond_norm.to_dict()}

    @classmethod
    def from_stats(cls, H: int, F: int, l: int, stats: dict | None) -> "LatentCodec":
        if not stats:
            raise InvalidState("normalization statistics are missing")
        return cls(H, F, l, LatentNorm.from_dict(stats.get("latent")), LatentNorm.from_dict(stats.get("condition")),
                   bool(stats.get("residual", True)))

    def raw_condition(self, histories: np.ndarray) -> np.ndarray:
        return build_condition(histories, self.F, self.basis, self.l)

    def raw_latents(self, tasks: list[PredictionTask]) -> np.ndarray:
        hist, fut = stack_tasks(tasks)
        y = dct_forward(np.concatenate([hist, fut], axis=1), self.basis, self.l)
        if self.residual:
            y = y - self.raw_condition(hist)
        return y

    def fit(self, tasks: list[PredictionTask]) -> "LatentCodec":
        self.norm = LatentNorm.fit(self.raw_latents(tasks))
        self.cond_norm = LatentNorm.fit(self.raw_condition(stack_tasks(tasks)[0]))
        return self

    def encode(self, tasks: list[PredictionTask]) -> tuple[np.ndarray, np.ndarray]:
        """(y0, c): standardized target latents and conditions, each (M, l, C)."""
        hist, _ = stack_tasks(tasks)
        return self._require_norm().standardize(self.raw_latents(tasks)), self.condition(hist)

    def condition(self, histories: np.ndarray) -> np.ndarray:
        """Standardized conditions (M, l, C) for histories (M, H, C)."""
        self._require_norm()
        return self.cond_norm.standardize(self.raw_condition(histories))

    def decode(self, z: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Standardized latents (..., l, C) plus their conditions -> future frames (..., F, C)."""
        norm = self._require_norm()
        y = norm.destandardize(np.asarray(z, dtype=np.float64))
        if self.residual:
            y = y + self.cond_norm.destandardize(np.asarray(c, dtype=np.float64))
        return dct_inverse(y, self.basis)[..., self.H :, :]
