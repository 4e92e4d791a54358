"""Binary dataset/sample containers and the checkpoint format.

Dataset and sample files share the "HCM1" magic:

    magic  b"HCM1"
    u32    kind            0 = dataset, 1 = samples
    u32    record count
    dataset: u32 n_test    (the last n_test records are the test split)
    samples: u32 K, u64 network evaluations, f64 sampling wall seconds
    records: u32 J, u32 H, u32 F,
             samples only: u32 parent item index,
             float64 coords, (H + F) x 3J for datasets, F x 3J for samples

Checkpoints:

    magic  b"HCMK", u32 format version, u32 header length, UTF-8 JSON header
    then per parameter array in canonical order:
        u32 name length, name, u64 element count, float64 values

All integers and floats are little-endian.
"""
from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch

from .denoiser import DTYPE, ArchConfig, DenoiserParams, param_shapes
from .errors import ArtifactMismatch
from .motion import MotionSequence, PredictionTask, split_history_future

DATA_MAGIC = b"HCM1"
CKPT_MAGIC = b"HCMK"
CKPT_VERSION = 1
KIND_DATASET = 0
KIND_SAMPLES = 1


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise ArtifactMismatch("file is truncated")
    return b


def _unpack(f, fmt: str):
    return struct.unpack(fmt, _read_exact(f, struct.calcsize(fmt)))


def _check_magic(f, magic: bytes, what: str) -> None:
    if _read_exact(f, 4) != magic:
        raise ArtifactMismatch(f"not a {what} file (bad magic)")


@dataclass
class Dataset:
    train: list[PredictionTask]
    test: list[PredictionTask]


def dumps_dataset(ds: Dataset) -> bytes:
    out = io.BytesIO()
    records = ds.train + ds.test
    out.write(DATA_MAGIC)
    out.write(struct.pack("<III", KIND_DATASET, len(records), len(ds.test)))
    for task in records:
        out.write(struct.pack("<III", task.joints, task.H, task.F))
        out.write(np.ascontiguousarray(task.full(), dtype="<f8").tobytes())
    return out.getvalue()


def loads_dataset(data: bytes) -> Dataset:
    f = io.BytesIO(data)
    _check_magic(f, DATA_MAGIC, "dataset")
    kind, count, n_test = _unpack(f, "<III")
    if kind != KIND_DATASET:
        raise ArtifactMismatch("file holds samples, expected a dataset")
    if n_test > count:
        raise ArtifactMismatch("test split larger than record count")
    tasks = []
    for _ in range(count):
        J, H, F = _unpack(f, "<III")
        n = (H + F) * 3 * J
        coords = np.frombuffer(_read_exact(f, 8 * n), dtype="<f8").reshape(H + F, 3 * J).astype(np.float64)
        tasks.append(split_history_future(MotionSequence(coords, J), H, F))
    if f.read(1):
        raise ArtifactMismatch("trailing bytes after dataset records")
    return Dataset(tasks[: count - n_test], tasks[count - n_test :])


def save_dataset(path, ds: Dataset) -> None:
    with open(path, "wb") as f:
        f.write(dumps_dataset(ds))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        return loads_dataset(f.read())


@dataclass
class SampleSet:
    samples: np.ndarray  # (M, K, F, 3J)
    H: int
    network_evals: int = 0
    wall_seconds: float = 0.0

    @property
    def K(self) -> int:
        return self.samples.shape[1]


def save_samples(path, ss: SampleSet) -> None:
    M, K, F, C = ss.samples.shape
    J = C // 3
    out = io.BytesIO()
    out.write(DATA_MAGIC)
    out.write(struct.pack("<IIIQd", KIND_SAMPLES, M * K, K, ss.network_evals, ss.wall_seconds))
    for i in range(M):
        for k in range(K):
            out.write(struct.pack("<IIII", J, ss.H, F, i))
            out.write(np.ascontiguousarray(ss.samples[i, k], dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(out.getvalue())


def load_samples(path) -> SampleSet:
    with open(path, "rb") as fh:
        f = io.BytesIO(fh.read())
    _check_magic(f, DATA_MAGIC, "samples")
    kind, count, K, evals, wall = _unpack(f, "<IIIQd")
    if kind != KIND_SAMPLES:
        raise ArtifactMismatch("file holds a dataset, expected samples")
    if K == 0 or count % K:
        raise ArtifactMismatch("record count is not a multiple of K")
    groups: dict[int, list[np.ndarray]] = {}
    H = 0
    for _ in range(count):
        J, H, F, parent = _unpack(f, "<IIII")
        arr = np.frombuffer(_read_exact(f, 8 * F * 3 * J), dtype="<f8").reshape(F, 3 * J).astype(np.float64)
        groups.setdefault(parent, []).append(arr)
    if sorted(groups) != list(range(len(groups))) or any(len(g) != K for g in groups.values()):
        raise ArtifactMismatch("sample records do not form K samples per item")
    samples = np.stack([np.stack(groups[i]) for i in range(len(groups))])
    return SampleSet(samples, H, evals, wall)


# --- checkpoints ---------------------------------------------------------------------


@dataclass
class Checkpoint:
    header: dict
    params: "OrderedDict[str, DenoiserParams]"  # "teacher" or "online" + "target"

    @property
    def kind(self) -> str:
        return self.header["kind"]


def _canonical_json(d: dict) -> bytes:
    return json.dumps(d, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False).encode()


def dumps_checkpoint(ck: Checkpoint) -> bytes:
    out = io.BytesIO()
    head = _canonical_json(ck.header)
    out.write(CKPT_MAGIC)
    out.write(struct.pack("<II", CKPT_VERSION, len(head)))
    out.write(head)
    for group, params in ck.params.items():
        for name in param_shapes(params.arch):
            full = f"{group}/{name}".encode()
            arr = params.tensors[name].detach().numpy().astype("<f8").ravel()
            out.write(struct.pack("<I", len(full)))
            out.write(full)
            out.write(struct.pack("<Q", arr.size))
            out.write(arr.tobytes())
    return out.getvalue()


def loads_checkpoint(data: bytes) -> Checkpoint:
    f = io.BytesIO(data)
    _check_magic(f, CKPT_MAGIC, "checkpoint")
    version, hlen = _unpack(f, "<II")
    if version != CKPT_VERSION:
        raise ArtifactMismatch(f"unsupported checkpoint version {version}")
    header = json.loads(_read_exact(f, hlen).decode())
    arch = ArchConfig(**header["arch"])
    shapes = param_shapes(arch)
    groups = ["teacher"] if header["kind"] == "teacher" else ["online", "target"]
    params = OrderedDict()
    for group in groups:
        tensors = OrderedDict()
        for name, shape in shapes.items():
            (nlen,) = _unpack(f, "<I")
            got = _read_exact(f, nlen).decode()
            if got != f"{group}/{name}":
                raise ArtifactMismatch(f"expected parameter {group}/{name}, found {got}")
            (count,) = _unpack(f, "<Q")
            if count != int(np.prod(shape)):
                raise ArtifactMismatch(f"{got}: {count} values, arch implies {int(np.prod(shape))}")
            arr = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8").reshape(shape)
            tensors[name] = torch.tensor(arr, dtype=DTYPE)
        params[group] = DenoiserParams(arch, tensors)
    if f.read(1):
        raise ArtifactMismatch("trailing bytes after checkpoint payload")
    return Checkpoint(header, params)


def save_checkpoint(path, ck: Checkpoint) -> None:
    with open(path, "wb") as f:
        f.write(dumps_checkpoint(ck))


def load_checkpoint(path, kind: str | None = None) -> Checkpoint:
    with open(path, "rb") as f:
        ck = loads_checkpoint(f.read())
    if kind is not None and ck.kind != kind:
        raise ArtifactMismatch(f"{path}: checkpoint kind is {ck.kind!r}, expected {kind!r}")
    return ck
