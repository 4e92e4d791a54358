"""Transformer denoiser over DCT-coefficient tokens.

The network sees ``l`` noisy latent rows followed by ``l_c`` condition rows.
Each row is projected to ``model_dim`` and tagged with a learned positional
and segment embedding; a timestep embedding and a guidance-scale embedding
are added to every token. Parameters live in a flat ordered name -> tensor
mapping so optimizers, EMA and checkpoints can treat them uniformly.
"""
from __future__ import annotations

import contextlib
import contextvars
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as tF

from .errors import InvalidArgument

DTYPE = torch.float64
GUIDANCE_EMBED_SCALE = 1000.0
LN_EPS = 1e-5


@dataclass(frozen=True)
class ArchConfig:
    latent_rows: int = 15
    cond_rows: int = 15
    channel_dim: int = 15
    model_dim: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    ff_mult: int = 4
    seed: int = 0
    # a zero output projection makes the untrained network predict exactly 0
    zero_out_proj: bool = True

    def __post_init__(self):
        for name in ("latent_rows", "cond_rows", "channel_dim", "model_dim", "n_blocks", "n_heads", "ff_mult"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"arch.{name} must be >= 1")
        if self.model_dim % self.n_heads:
            raise InvalidArgument("arch.model_dim must be divisible by arch.n_heads")
        if self.model_dim % 2:
            raise InvalidArgument("arch.model_dim must be even for sinusoidal embeddings")

    @property
    def token_count(self) -> int:
        return self.latent_rows + self.cond_rows

    def to_dict(self) -> dict:
        return asdict(self)

    def shape_key(self) -> tuple:
        """Everything except seed and init flags: two archs with equal keys are interchangeable."""
        d = self.to_dict()
        d.pop("seed")
        d.pop("zero_out_proj")
        return tuple(sorted(d.items()))


def param_shapes(arch: ArchConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Canonical parameter inventory. The order here is the checkpoint order."""
    D, C, T = arch.model_dim, arch.channel_dim, arch.token_count
    Dff = arch.ff_mult * D
    shapes = OrderedDict()
    shapes["in_proj.w"] = (C, D)
    shapes["in_proj.b"] = (D,)
    shapes["pos_emb"] = (T, D)
    shapes["seg_emb"] = (2, D)
    shapes["null_token"] = (D,)
    for mlp in ("t_mlp", "w_mlp"):
        shapes[f"{mlp}.w1"] = (D, D)
        shapes[f"{mlp}.b1"] = (D,)
        shapes[f"{mlp}.w2"] = (D, D)
        shapes[f"{mlp}.b2"] = (D,)
    for i in range(arch.n_blocks):
        p = f"blocks.{i}."
        shapes[p + "ln1.g"] = (D,)
        shapes[p + "ln1.b"] = (D,)
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{proj}"] = (D, D)
            shapes[p + f"attn.b{proj}"] = (D,)
        shapes[p + "ln2.g"] = (D,)
        shapes[p + "ln2.b"] = (D,)
        shapes[p + "ff.w1"] = (D, Dff)
        shapes[p + "ff.b1"] = (Dff,)
        shapes[p + "ff.w2"] = (Dff, D)
        shapes[p + "ff.b2"] = (D,)
    shapes["out_proj.w"] = (D, C)
    shapes["out_proj.b"] = (C,)
    return shapes


def param_count(arch: ArchConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(arch).values())


@dataclass
class DenoiserParams:
    arch: ArchConfig
    tensors: "OrderedDict[str, torch.Tensor]"

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def clone(self) -> "DenoiserParams":
        return DenoiserParams(self.arch, OrderedDict((k, v.detach().clone()) for k, v in self.tensors.items()))

    def numel(self) -> int:
        return sum(v.numel() for v in self.tensors.values())

    def requires_grad_(self, flag: bool = True) -> "DenoiserParams":
        for v in self.tensors.values():
            v.requires_grad_(flag)
        return self

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(v).all()) for v in self.tensors.values())


def _init_kind(name: str) -> str:
    leaf = name.rsplit(".", 1)[-1]
    if leaf.startswith("b"):
        return "zero"
    if leaf == "g":
        return "one"
    return "uniform"


def init_params(arch: ArchConfig) -> DenoiserParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, layer-norm gains 1.

    Embedding tables use fan_in = model_dim. Draws come from a numpy generator
    seeded by ``arch.seed`` in canonical name order.
    """
    rng = np.random.default_rng(arch.seed)
    tensors = OrderedDict()
    for name, shape in param_shapes(arch).items():
        kind = _init_kind(name)
        if kind == "zero":
            arr = np.zeros(shape)
        elif kind == "one":
            arr = np.ones(shape)
        else:
            fan_in = shape[0] if len(shape) == 2 and not name.endswith("_emb") else arch.model_dim
            bound = 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
            if name == "out_proj.w" and arch.zero_out_proj:
                arr = np.zeros(shape)
        tensors[name] = torch.tensor(arr, dtype=DTYPE)
    return DenoiserParams(arch, tensors)


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Interleaved sinusoidal embedding: [sin(t w_0), cos(t w_0), sin(t w_1), ...], w_i = 10000^(-2i/dim)."""
    if dim % 2:
        raise InvalidArgument(f"embedding width must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    ang = t[..., None] * freqs
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def _sinusoid(t: torch.Tensor, dim: int) -> torch.Tensor:
    freqs = 10000.0 ** (-2.0 * torch.arange(dim // 2, dtype=DTYPE) / dim)
    ang = t[:, None] * freqs
    return torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).reshape(t.shape[0], dim)


# Network-evaluation accounting. One unit per sample passed through forward.
_eval_counter: contextvars.ContextVar = contextvars.ContextVar("eval_counter", default=None)


class EvalCounter:
    def __init__(self):
        self.count = 0


@contextlib.contextmanager
def count_evals():
    counter = EvalCounter()
    token = _eval_counter.set(counter)
    try:
        yield counter
    finally:
        _eval_counter.reset(token)


def _record(n: int) -> None:
    counter = _eval_counter.get()
    if counter is not None:
        counter.count += n


def _as_batch(v, B: int) -> torch.Tensor:
    v = torch.as_tensor(v, dtype=DTYPE)
    if v.ndim == 0:
        v = v.expand(B)
    return v


def _mlp(P, prefix, x):
    h = tF.silu(x @ P[prefix + ".w1"] + P[prefix + ".b1"])
    return h @ P[prefix + ".w2"] + P[prefix + ".b2"]


def _attention(P, prefix, x, n_heads):
    B, T, D = x.shape
    hd = D // n_heads

    def split(z):
        return z.reshape(B, T, n_heads, hd).transpose(1, 2)

    q = split(x @ P[prefix + "wq"] + P[prefix + "bq"])
    k = split(x @ P[prefix + "wk"] + P[prefix + "bk"])
    v = split(x @ P[prefix + "wv"] + P[prefix + "bv"])
    att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
    out = (att @ v).transpose(1, 2).reshape(B, T, D)
    return out @ P[prefix + "wo"] + P[prefix + "bo"]


def forward(params: DenoiserParams, y, t, w, c=None, drop=None) -> torch.Tensor:
    """Evaluate the network.

    y: (B, l, C) noisy latent rows; t: timestep index, scalar or (B,);
    w: guidance scale, scalar or (B,); c: (B, l_c, C) condition rows or
    None for the null condition; drop: optional (B,) bool mask selecting
    samples whose condition is replaced by the null token.
    Returns (B, l, C).
    """
    arch = params.arch
    P = params.tensors
    y = torch.as_tensor(y, dtype=DTYPE)
    if y.ndim != 3 or y.shape[1:] != (arch.latent_rows, arch.channel_dim):
        raise InvalidArgument(f"latent input must be (B, {arch.latent_rows}, {arch.channel_dim}), got {tuple(y.shape)}")
    B = y.shape[0]
    t = _as_batch(t, B)
    w = _as_batch(w, B)
    if t.shape != (B,) or w.shape != (B,):
        raise InvalidArgument("t and w must be scalars or length-B vectors")
    if not bool(torch.isfinite(w).all()):
        raise InvalidArgument("guidance scale must be finite")

    D = arch.model_dim
    x_tok = y @ P["in_proj.w"] + P["in_proj.b"]
    null = P["null_token"].expand(B, arch.cond_rows, D)
    if c is None:
        c_tok = null
    else:
        c = torch.as_tensor(c, dtype=DTYPE)
        if c.shape != (B, arch.cond_rows, arch.channel_dim):
            raise InvalidArgument(f"condition must be (B, {arch.cond_rows}, {arch.channel_dim}), got {tuple(c.shape)}")
        c_tok = c @ P["in_proj.w"] + P["in_proj.b"]
        if drop is not None:
            drop = torch.as_tensor(drop, dtype=torch.bool).reshape(B, 1, 1)
            c_tok = torch.where(drop, null, c_tok)
    seg = torch.cat([P["seg_emb"][0].expand(arch.latent_rows, D), P["seg_emb"][1].expand(arch.cond_rows, D)])
    h = torch.cat([x_tok, c_tok], dim=1) + P["pos_emb"] + seg
    emb = _mlp(P, "t_mlp", _sinusoid(t, D)) + _mlp(P, "w_mlp", _sinusoid(w * GUIDANCE_EMBED_SCALE, D))
    h = h + emb[:, None, :]
    for i in range(arch.n_blocks):
        p = f"blocks.{i}."
        h = h + _attention(P, p + "attn.", tF.layer_norm(h, (D,), P[p + "ln1.g"], P[p + "ln1.b"], LN_EPS), arch.n_heads)
        z = tF.layer_norm(h, (D,), P[p + "ln2.g"], P[p + "ln2.b"], LN_EPS)
        h = h + tF.gelu(z @ P[p + "ff.w1"] + P[p + "ff.b1"]) @ P[p + "ff.w2"] + P[p + "ff.b2"]
    _record(B)
    return h[:, : arch.latent_rows] @ P["out_proj.w"] + P["out_proj.b"]
