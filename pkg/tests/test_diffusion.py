import math

import numpy as np
import pytest
import torch

from conftest import constant_net, schedule_from_abar, tiny_arch
from humancm.denoiser import count_evals, forward, init_params
from humancm.diffusion import (TeacherConfig, build_schedule, ddim_step, ddim_update, diffusion_forward, predict_eps,
                               sampling_grid, teacher_sample, train_teacher)
from humancm.errors import InvalidArgument
from humancm.optim import OptimConfig


def test_schedule_values():
    s = build_schedule(1, 0.5, 0.5)
    assert np.allclose(s.alphas_cum, [1.0, 0.5])
    s = build_schedule(10, 0.1, 0.1)
    assert s.alphas_cum[10] == pytest.approx(0.34867844, abs=1e-8)
    for lo, hi in ((1e-4, 0.02), (1e-3, 0.2)):
        a = build_schedule(100, lo, hi).alphas_cum
        assert a[0] == 1.0 and np.all(np.diff(a) < 0) and np.all(a > 0)
    with pytest.raises(InvalidArgument):
        build_schedule(0)
    with pytest.raises(InvalidArgument):
        build_schedule(10, 0.2, 0.1)


def test_default_schedule_reaches_noise():
    # the terminal state must be close to pure noise for sampling to start from N(0, I)
    assert build_schedule().alphas_cum[-1] < 1e-3


def test_schedule_dict_round_trip():
    s = build_schedule(20, 1e-3, 0.1)
    t = type(s).from_dict(s.to_dict())
    assert np.array_equal(s.alphas_cum, t.alphas_cum)


def test_forward_noising():
    s = schedule_from_abar([1.0, 0.25, 1e-12])
    assert float(diffusion_forward(torch.tensor([2.0]), 1, torch.tensor([1.0]), s)) == pytest.approx(1.86602540, abs=1e-8)
    y0 = torch.tensor([[3.0, -1.0]], dtype=torch.float64)
    noise = torch.tensor([[0.4, 0.9]], dtype=torch.float64)
    assert torch.equal(diffusion_forward(y0, 0, noise, s), y0)
    assert torch.allclose(diffusion_forward(y0, 2, noise, s), noise, rtol=1e-5)
    with pytest.raises(InvalidArgument):
        diffusion_forward(y0, 3, noise, s)


def test_ddim_scalar_hand_values():
    arch = tiny_arch(latent_rows=1, cond_rows=1, channel_dim=1)
    teacher = constant_net(arch, 1.0)  # eps_hat == 1
    s = schedule_from_abar([1.0, 0.81, 0.25])
    y = torch.tensor([[[1.86602540378]]], dtype=torch.float64)
    out = ddim_step(y, 2, 1, teacher, None, s)
    # y0_hat = (1.8660254 - sqrt(0.75)) / 0.5 = 2, then 0.9 * 2 + sqrt(0.19) * 1
    assert float(out) == pytest.approx(0.9 * 2 + math.sqrt(0.19), abs=1e-10)
    assert float(out) == pytest.approx(2.23588989, abs=1e-8)
    assert float(ddim_step(y, 2, 0, teacher, None, s)) == pytest.approx(2.0, abs=1e-10)
    with pytest.raises(InvalidArgument):
        ddim_step(y, 1, 1, teacher, None, s)


def test_true_noise_inverts_forward(rng):
    s = build_schedule()
    y0 = torch.tensor(rng.standard_normal((4, 3, 2)))
    eps = torch.tensor(rng.standard_normal((4, 3, 2)))
    n = np.array([1, 30, 70, 100])
    y = diffusion_forward(y0, n, eps, s)
    a = s.abar(n)[:, None, None]
    back = ddim_update(y, eps, a, torch.ones_like(a))
    assert float((back - y0).abs().max()) < 1e-9


def test_ddim_chain_composes_for_constant_eps(rng):
    arch = tiny_arch()
    teacher = constant_net(arch, 0.3)
    s = build_schedule(50)
    y = torch.tensor(rng.standard_normal((2, 3, 2)))
    direct = ddim_step(y, 40, 5, teacher, None, s)
    chained = ddim_step(ddim_step(y, 40, 22, teacher, None, s), 22, 5, teacher, None, s)
    assert torch.allclose(direct, chained, atol=1e-12)


def test_zero_teacher_predicts_zero(rng):
    eps = predict_eps(constant_net(tiny_arch(), 0.0), rng.standard_normal((2, 3, 2)), 4, rng.standard_normal((2, 3, 2)))
    assert eps.shape == (2, 3, 2) and torch.all(eps == 0)


def test_sampling_grid():
    assert sampling_grid(100, 1) == [100, 0]
    assert sampling_grid(100, 10) == list(range(100, -1, -10))
    assert sampling_grid(100, 100) == list(range(100, -1, -1))
    with pytest.raises(InvalidArgument):
        sampling_grid(10, 11)


def test_teacher_sample_matches_straight_line_oracle(rng):
    arch = tiny_arch(zero_out_proj=False)
    teacher = init_params(arch)
    s = build_schedule(100)
    noise = rng.standard_normal((2, 3, 2))
    c = torch.tensor(rng.standard_normal((2, 3, 2)))
    with count_evals() as counter:
        got = teacher_sample(noise, 100, teacher, c, s)
    assert counter.count == 100 * 2
    # oracle: the two DDIM formulas written out with plain floats per step
    y = torch.tensor(noise)
    ab = s.alphas_cum
    with torch.no_grad():
        for n in range(100, 0, -1):
            eps = forward(teacher, y, float(n), 0.0, c)
            x0 = (y - math.sqrt(1 - ab[n]) * eps) / math.sqrt(ab[n])
            y = math.sqrt(ab[n - 1]) * x0 + math.sqrt(1 - ab[n - 1]) * eps
    assert torch.allclose(got, y, atol=1e-10, rtol=0)


def test_teacher_sample_single_step(rng):
    teacher = init_params(tiny_arch(zero_out_proj=False))
    s = build_schedule(20)
    noise = torch.tensor(rng.standard_normal((1, 3, 2)))
    assert torch.equal(teacher_sample(noise, 1, teacher, None, s), ddim_step(noise, 20, 0, teacher, None, s))


def test_train_teacher_is_deterministic(rng):
    arch = tiny_arch()
    y0 = rng.standard_normal((12, 3, 2))
    c = rng.standard_normal((12, 3, 2))
    s = build_schedule(20)
    cfg = TeacherConfig(epochs=3, batch_size=4, seed=5)
    p1, h1 = train_teacher(y0, c, s, arch, cfg, OptimConfig())
    p2, h2 = train_teacher(y0, c, s, arch, cfg, OptimConfig())
    assert h1.iterations == h2.iterations
    assert all(torch.equal(p1[k], p2[k]) for k in p1.tensors)
    assert all(math.isfinite(v) for v in h1.iterations)
    assert [e for e, _, _ in h1.epochs] == [0, 1, 2]
