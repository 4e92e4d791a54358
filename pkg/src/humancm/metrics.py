"""Best-of-K displacement metrics and sampler benchmarking.

Pose distance is the L2 norm over the whole 3J pose vector of a frame.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .denoiser import count_evals
from .errors import InvalidArgument


def _check(samples, gt):
    samples = np.asarray(samples, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[0] < 1 or samples.shape[1:] != gt.shape:
        raise InvalidArgument(f"samples {samples.shape} do not match ground truth {gt.shape}")
    return samples, gt


def frame_errors(samples, gt) -> np.ndarray:
    """(K, F) per-frame pose distances."""
    samples, gt = _check(samples, gt)
    return np.linalg.norm(samples - gt[None], axis=-1)


def ade(samples, gt) -> float:
    return float(frame_errors(samples, gt).mean(axis=1).min())


def fde(samples, gt) -> float:
    return float(frame_errors(samples, gt)[:, -1].min())


def build_mm_gt(last_poses, tau: float = 0.5) -> list[list[int]]:
    """For each item, indices of all items whose last observed pose lies within tau of its own."""
    if not tau > 0:
        raise InvalidArgument("tau must be > 0")
    last_poses = np.asarray(last_poses, dtype=np.float64)
    d = np.linalg.norm(last_poses[:, None, :] - last_poses[None, :, :], axis=-1)
    return [list(np.flatnonzero(row <= tau)) for row in d]


def _mm(metric, samples, mm_gt_set):
    if len(mm_gt_set) == 0:
        raise InvalidArgument("multi-modal ground-truth set is empty")
    return float(np.mean([metric(samples, g) for g in mm_gt_set]))


def mmade(samples, mm_gt_set) -> float:
    return _mm(ade, samples, mm_gt_set)


def mmfde(samples, mm_gt_set) -> float:
    return _mm(fde, samples, mm_gt_set)


@dataclass
class MetricReport:
    ade: float
    fde: float
    mmade: float
    mmfde: float
    samples: int
    network_evals: int
    wall_seconds: float

    def to_dict(self) -> dict:
        return asdict(self)

    def csv(self) -> str:
        keys = list(self.to_dict())
        return ",".join(keys) + "\n" + ",".join(repr(v) for v in self.to_dict().values()) + "\n"


def evaluate(samples, futures, mm_groups) -> dict:
    """Mean metrics over a test set. samples (M, K, F, C), futures (M, F, C)."""
    samples = np.asarray(samples, dtype=np.float64)
    futures = np.asarray(futures, dtype=np.float64)
    if samples.shape[0] != futures.shape[0]:
        raise InvalidArgument(f"{samples.shape[0]} sample groups for {futures.shape[0]} test items")
    rows = []
    for i in range(len(futures)):
        group = [futures[j] for j in mm_groups[i]]
        rows.append((ade(samples[i], futures[i]), fde(samples[i], futures[i]),
                     mmade(samples[i], group), mmfde(samples[i], group)))
    a, f, ma, mf = np.mean(rows, axis=0)
    return {"ade": float(a), "fde": float(f), "mmade": float(ma), "mmfde": float(mf)}


def bench(sampler: Callable[[np.ndarray], np.ndarray], histories, futures, K: int,
          repetitions: int = 3, tau: float = 0.5) -> MetricReport:
    """Time ``sampler(histories) -> (M, K, F, C)`` and score its output.

    wall_seconds is the median over repetitions of one full test-set pass;
    network_evals is the count of a single pass.
    """
    if repetitions < 1:
        raise InvalidArgument("repetitions must be >= 1")
    histories = np.asarray(histories, dtype=np.float64)
    times = []
    for _ in range(repetitions):
        with count_evals() as counter:
            t0 = time.perf_counter()
            samples = sampler(histories)
            times.append(time.perf_counter() - t0)
    groups = build_mm_gt(histories[:, -1], tau)
    scores = evaluate(samples, futures, groups)
    return MetricReport(samples=K, network_evals=counter.count, wall_seconds=statistics.median(times), **scores)
