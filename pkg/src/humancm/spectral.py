"""Orthonormal DCT-II basis and truncated spectral transforms.

All transforms act on the frame axis (second to last) and treat every
coordinate channel independently, so leading batch axes pass through.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class DctBasis:
    n: int
    matrix: np.ndarray  # (n, n), rows are frequencies


def build_dct_basis(n: int) -> DctBasis:
    """Orthonormal DCT-II matrix D with D @ D.T == I.

    D[k, m] = sqrt(2/n) * c_k * cos(pi * (2m + 1) * k / (2n)), c_0 = 1/sqrt(2).
    """
    if n < 1:
        raise InvalidArgument(f"frame count must be >= 1, got {n}")
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    mat = math.sqrt(2.0 / n) * np.cos(np.pi * (2 * m + 1) * k / (2 * n))
    mat[0, :] = 1.0 / math.sqrt(n)
    mat.setflags(write=False)
    return DctBasis(n=n, matrix=mat)


def dct_forward(x: np.ndarray, basis: DctBasis, l: int) -> np.ndarray:
    """First ``l`` DCT coefficients of ``x`` (..., n, channels) -> (..., l, channels)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-2] != basis.n:
        raise InvalidArgument(f"expected {basis.n} frames, got shape {x.shape}")
    if not 1 <= l <= basis.n:
        raise InvalidArgument(f"retained count must lie in [1, {basis.n}], got {l}")
    return basis.matrix[:l] @ x


def dct_inverse(y: np.ndarray, basis: DctBasis) -> np.ndarray:
    """Reconstruct n frames from the leading coefficients: D_L^T @ y."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim < 2:
        raise InvalidArgument(f"coefficients need a frequency and a channel axis, got {y.shape}")
    l = y.shape[-2]
    if not 1 <= l <= basis.n:
        raise InvalidArgument(f"{l} coefficient rows exceed basis size {basis.n}")
    return basis.matrix[:l].T @ y


def low_band_energy(x: np.ndarray, basis: DctBasis, band: int | None = None) -> float:
    """Fraction of squared coefficient mass in the lowest ``band`` rows (default ceil(n/4))."""
    if band is None:
        band = math.ceil(basis.n / 4)
    y = dct_forward(x, basis, basis.n)
    total = float(np.sum(y**2))
    if total == 0.0:
        return 1.0
    return float(np.sum(y[..., :band, :] ** 2)) / total
