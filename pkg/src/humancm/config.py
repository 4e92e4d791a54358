"""Run configuration: flat ``key=value`` text with dotted section prefixes.

    # comment
    seed=0
    data.J=5
    consistency.lambda=1/15

Values may be written as fractions ``a/b``. Unknown keys, malformed values
and out-of-range settings raise ConfigError naming the key; nothing is
executed on a parse failure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .consistency import ConsistencyConfig
from .denoiser import ArchConfig
from .diffusion import NoiseSchedule, TeacherConfig, build_schedule
from .errors import ConfigError, InvalidArgument
from .motion import FAMILIES, SyntheticConfig
from .optim import OptimConfig


def _float(s: str) -> float:
    return float(Fraction(s)) if "/" in s else float(s)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _families(s: str) -> tuple:
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _positive(v):
    return v >= 1


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 <= v <= 1


# key -> (parser, check, description of check)
SCHEMA = {
    "seed": (int, _nonneg, ">= 0"),
    "data.J": (int, _positive, ">= 1"),
    "data.H": (int, _positive, ">= 1"),
    "data.F": (int, _positive, ">= 1"),
    "data.n_sequences": (int, _positive, ">= 1"),
    "data.n_test": (int, _positive, ">= 1"),
    "data.motion_families": (_families, lambda v: bool(v) and set(v) <= set(FAMILIES), f"non-empty subset of {FAMILIES}"),
    "data.amplitude_min": (_float, _nonneg, ">= 0"),
    "data.amplitude_max": (_float, _nonneg, ">= 0"),
    "data.frequency_min": (_float, _nonneg, ">= 0"),
    "data.frequency_max": (_float, _nonneg, ">= 0"),
    "data.noise_std": (_float, _nonneg, ">= 0"),
    "data.offset": (_float, _nonneg, ">= 0"),
    "data.n_subjects": (int, _positive, ">= 1"),
    "data.jitter": (_float, _nonneg, ">= 0"),
    "codec.l": (int, _positive, ">= 1"),
    "codec.residual": (_bool, lambda v: True, ""),
    "arch.model_dim": (int, _positive, ">= 1"),
    "arch.n_blocks": (int, _positive, ">= 1"),
    "arch.n_heads": (int, _positive, ">= 1"),
    "arch.ff_mult": (int, _positive, ">= 1"),
    "schedule.N": (int, _positive, ">= 1"),
    "schedule.beta_min": (_float, lambda v: 0 < v < 1, "in (0, 1)"),
    "schedule.beta_max": (_float, lambda v: 0 < v < 1, "in (0, 1)"),
    "optim.lr": (_float, lambda v: v > 0, "> 0"),
    "optim.decay_factor": (_float, lambda v: 0 < v <= 1, "in (0, 1]"),
    "optim.decay_every": (int, _positive, ">= 1"),
    "optim.beta1": (_float, lambda v: 0 <= v < 1, "in [0, 1)"),
    "optim.beta2": (_float, lambda v: 0 <= v < 1, "in [0, 1)"),
    "optim.eps": (_float, lambda v: v > 0, "> 0"),
    "optim.clip_norm": (_float, _nonneg, ">= 0"),
    "teacher.epochs": (int, _positive, ">= 1"),
    "teacher.batch_size": (int, _positive, ">= 1"),
    "teacher.p_uncond": (_float, _unit, "in [0, 1]"),
    "consistency.k": (int, _positive, ">= 1"),
    "consistency.k_mode": (str, lambda v: v in ("fixed", "sampled"), "'fixed' or 'sampled'"),
    "consistency.w_min": (_float, lambda v: True, ""),
    "consistency.w_max": (_float, lambda v: True, ""),
    "consistency.w_star": (_float, lambda v: True, ""),
    "consistency.lambda": (_float, _nonneg, ">= 0"),
    "consistency.rho": (_float, _unit, "in [0, 1]"),
    "consistency.sigma_data": (_float, lambda v: v > 0, "> 0"),
    "consistency.distance": (str, lambda v: v in ("l2", "pseudo_huber"), "'l2' or 'pseudo_huber'"),
    "consistency.huber_c": (_float, lambda v: v > 0, "> 0"),
    "consistency.epochs": (int, _positive, ">= 1"),
    "consistency.batch_size": (int, _positive, ">= 1"),
    "consistency.sample_with_ema": (_bool, lambda v: True, ""),
    "eval.k_samples": (int, _positive, ">= 1"),
    "eval.tau": (_float, lambda v: v > 0, "> 0"),
    "eval.teacher_steps": (int, _positive, ">= 1"),
    "eval.repetitions": (int, _positive, ">= 1"),
    "eval.bench_items": (int, _nonneg, ">= 0 (0 = whole test split)"),
}

_SYN = SyntheticConfig()
_ARCH = ArchConfig()
_OPT = OptimConfig()
_TEA = TeacherConfig()
_CON = ConsistencyConfig()

DEFAULTS = {
    "seed": 0,
    "data.J": _SYN.J,
    "data.H": _SYN.H,
    "data.F": _SYN.F,
    "data.n_sequences": 512,
    "data.n_test": 64,
    "data.motion_families": _SYN.motion_families,
    "data.amplitude_min": _SYN.amplitude[0],
    "data.amplitude_max": _SYN.amplitude[1],
    "data.frequency_min": _SYN.frequency[0],
    "data.frequency_max": _SYN.frequency[1],
    "data.noise_std": _SYN.noise_std,
    "data.offset": _SYN.offset,
    "data.n_subjects": _SYN.n_subjects,
    "data.jitter": _SYN.jitter,
    "codec.l": 15,
    "codec.residual": True,
    "arch.model_dim": _ARCH.model_dim,
    "arch.n_blocks": _ARCH.n_blocks,
    "arch.n_heads": _ARCH.n_heads,
    "arch.ff_mult": _ARCH.ff_mult,
    "schedule.N": 100,
    "schedule.beta_min": 1e-3,
    "schedule.beta_max": 0.2,
    "optim.lr": _OPT.base_lr,
    "optim.decay_factor": _OPT.decay_factor,
    "optim.decay_every": _OPT.decay_every,
    "optim.beta1": _OPT.beta1,
    "optim.beta2": _OPT.beta2,
    "optim.eps": _OPT.eps,
    "optim.clip_norm": _OPT.clip_norm,
    "teacher.epochs": _TEA.epochs,
    "teacher.batch_size": _TEA.batch_size,
    "teacher.p_uncond": _TEA.p_uncond,
    "consistency.k": _CON.k,
    "consistency.k_mode": _CON.k_mode,
    "consistency.w_min": _CON.w_min,
    "consistency.w_max": _CON.w_max,
    "consistency.w_star": _CON.w_star,
    "consistency.lambda": _CON.lam,
    "consistency.rho": _CON.rho,
    "consistency.sigma_data": _CON.sigma_data,
    "consistency.distance": _CON.distance,
    "consistency.huber_c": _CON.huber_c,
    "consistency.epochs": _CON.epochs,
    "consistency.batch_size": _CON.batch_size,
    "consistency.sample_with_ema": _CON.sample_with_ema,
    "eval.k_samples": 50,
    "eval.tau": 0.5,
    "eval.teacher_steps": 100,
    "eval.repetitions": 3,
    "eval.bench_items": 16,
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def synthetic(self, n_sequences: int | None = None) -> SyntheticConfig:
        v = self.values
        return SyntheticConfig(
            J=v["data.J"], H=v["data.H"], F=v["data.F"],
            n_sequences=n_sequences if n_sequences is not None else v["data.n_sequences"] + v["data.n_test"],
            motion_families=v["data.motion_families"],
            amplitude=(v["data.amplitude_min"], v["data.amplitude_max"]),
            frequency=(v["data.frequency_min"], v["data.frequency_max"]),
            noise_std=v["data.noise_std"], offset=v["data.offset"],
            n_subjects=v["data.n_subjects"], jitter=v["data.jitter"], seed=self.seed,
        )

    def arch(self, seed: int | None = None) -> ArchConfig:
        v = self.values
        C = 3 * v["data.J"]
        return ArchConfig(
            latent_rows=v["codec.l"], cond_rows=v["codec.l"], channel_dim=C,
            model_dim=v["arch.model_dim"], n_blocks=v["arch.n_blocks"], n_heads=v["arch.n_heads"],
            ff_mult=v["arch.ff_mult"], seed=self.seed if seed is None else seed,
        )

    def schedule(self) -> NoiseSchedule:
        v = self.values
        return build_schedule(v["schedule.N"], v["schedule.beta_min"], v["schedule.beta_max"])

    def optim(self) -> OptimConfig:
        v = self.values
        return OptimConfig(v["optim.lr"], v["optim.decay_factor"], v["optim.decay_every"],
                           v["optim.beta1"], v["optim.beta2"], v["optim.eps"], v["optim.clip_norm"])

    def teacher(self) -> TeacherConfig:
        v = self.values
        return TeacherConfig(v["teacher.epochs"], v["teacher.batch_size"], v["teacher.p_uncond"], self.seed)

    def consistency(self) -> ConsistencyConfig:
        v = self.values
        return ConsistencyConfig(
            k=v["consistency.k"], k_mode=v["consistency.k_mode"], w_min=v["consistency.w_min"],
            w_max=v["consistency.w_max"], w_star=v["consistency.w_star"], lam=v["consistency.lambda"],
            rho=v["consistency.rho"], sigma_data=v["consistency.sigma_data"], distance=v["consistency.distance"],
            huber_c=v["consistency.huber_c"], epochs=v["consistency.epochs"],
            batch_size=v["consistency.batch_size"], seed=self.seed + 1,
            sample_with_ema=v["consistency.sample_with_ema"],
        )

    def validate(self) -> "RunConfig":
        """Cross-field checks; each failure names one key."""
        v = self.values
        checks = [
            ("data.amplitude_max", v["data.amplitude_min"] <= v["data.amplitude_max"], "must be >= data.amplitude_min"),
            ("data.frequency_max", v["data.frequency_min"] <= v["data.frequency_max"], "must be >= data.frequency_min"),
            ("codec.l", v["codec.l"] <= v["data.H"] + v["data.F"], "must be <= data.H + data.F"),
            ("arch.n_heads", v["arch.model_dim"] % v["arch.n_heads"] == 0, "must divide arch.model_dim"),
            ("arch.model_dim", v["arch.model_dim"] % 2 == 0, "must be even"),
            ("schedule.beta_max", v["schedule.beta_min"] <= v["schedule.beta_max"], "must be >= schedule.beta_min"),
            ("consistency.k", v["consistency.k"] < v["schedule.N"], "must be < schedule.N"),
            ("consistency.w_max", v["consistency.w_min"] <= v["consistency.w_max"], "must be >= consistency.w_min"),
            ("eval.teacher_steps", v["eval.teacher_steps"] <= v["schedule.N"], "must be <= schedule.N"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, msg)
        try:
            self.synthetic(), self.arch(), self.schedule(), self.optim(), self.teacher(), self.consistency()
        except InvalidArgument as exc:  # pragma: no cover - guarded by the checks above
            raise ConfigError("config", str(exc)) from exc
        return self


def parse_config(text: str) -> RunConfig:
    values = dict(DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        parser, check, desc = SCHEMA[key]
        try:
            parsed = parser(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(key, f"cannot parse {value!r}: {exc}") from exc
        if not check(parsed):
            raise ConfigError(key, f"must be {desc}, got {value!r}")
        values[key] = parsed
    return RunConfig(values).validate()


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key in SCHEMA:
        v = cfg.values[key]
        if isinstance(v, tuple):
            v = ",".join(v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"
