import numpy as np
import pytest
import torch

from humancm.denoiser import ArchConfig, DenoiserParams, init_params
from humancm.diffusion import NoiseSchedule

torch.set_num_threads(1)


def tiny_arch(**kw) -> ArchConfig:
    base = dict(latent_rows=3, cond_rows=3, channel_dim=2, model_dim=8, n_blocks=1, n_heads=2, ff_mult=2, seed=0)
    base.update(kw)
    return ArchConfig(**base)


def constant_net(arch: ArchConfig, value: float = 1.0) -> DenoiserParams:
    """All weights zero and the output bias set to ``value``: forward() returns ``value`` everywhere."""
    p = init_params(arch)
    for v in p.tensors.values():
        v.zero_()
    p.tensors["out_proj.b"].fill_(value)
    return p


def schedule_from_abar(abar) -> NoiseSchedule:
    abar = np.asarray(abar, dtype=np.float64)
    betas = 1.0 - abar[1:] / abar[:-1]
    return NoiseSchedule(len(betas), betas, abar)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one "PASS/FAIL criterion N: ..." line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
