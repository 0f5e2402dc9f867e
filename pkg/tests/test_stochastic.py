import math

import numpy as np
import pytest

from sclab.errors import DomainError
from sclab.hyperbolic import SolverConfig, solve_skeleton
from sclab.models import Control, Field, FluxModel, NoiseModel, TorusGrid
from sclab.stochastic import (derive_seed, increment_at, sample_batch, sample_increments,
                              simulate_batch, solve_stochastic, step_controlled)


def test_increments_are_reproducible():
    a = sample_increments(42, 100, 3, 0.01)
    b = sample_increments(42, 100, 3, 0.01)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, sample_increments(43, 100, 3, 0.01).increments)


def test_increment_at_matches_stream():
    p = sample_increments(7, 37, 4, 0.02)
    for step, mode in [(0, 0), (1, 3), (17, 2), (36, 1), (35, 0)]:
        assert increment_at(7, step, mode, 0.02) == p.increments[step, mode]


def test_prefix_property():
    # a longer path starts with the shorter one
    short = sample_increments(5, 10, 2, 0.1).increments
    long = sample_increments(5, 50, 2, 0.1).increments
    assert np.array_equal(long[:10], short)


def test_increment_moments():
    dt = 0.01
    x = sample_increments(123, 200000, 1, dt).increments[:, 0]
    n = len(x)
    # 5-sigma bands for the sample mean and variance of N(0, dt)
    assert abs(x.mean()) < 5 * math.sqrt(dt / n)
    assert abs(x.var() - dt) < 5 * dt * math.sqrt(2 / n)


def test_modes_are_uncorrelated():
    x = sample_increments(9, 100000, 2, 1.0).increments
    r = np.corrcoef(x.T)[0, 1]
    assert abs(r) < 5 / math.sqrt(len(x))


def test_derive_seed_distinct():
    seeds = {derive_seed(1, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(1, 5) == derive_seed(1, 5)
    assert derive_seed(1, 5) != derive_seed(2, 5)


def test_coarsen_sums_increments():
    p = sample_increments(3, 12, 2, 0.1)
    c = p.coarsen(3)
    assert c.dt == pytest.approx(0.3)
    assert np.allclose(c.increments, p.increments.reshape(4, 3, 2).sum(axis=1))
    with pytest.raises(DomainError):
        p.coarsen(5)


def test_eps_zero_is_skeleton(grid64, burgers, trig3, sine64):
    h = Control.constant([0.5, 0.2, -0.1], 0.2, 10)
    a = solve_stochastic(sine64, burgers, trig3, h, 0.0, seed=1)
    b = solve_skeleton(sine64, burgers, trig3, h)
    assert np.array_equal(a.values, b.values)


def test_zero_flux_additive_oracle(grid64):
    # mean(u(T)) = sigma * (int h + sqrt(eps) * W(T)) exactly
    noise = NoiseModel.additive(0.4)
    h = Control.constant([0.3], 0.5, 25)
    tr = solve_stochastic(Field.constant(grid64, 0.0), FluxModel.zero(), noise, h, 0.01,
                          seed=11)
    W = tr.meta["noise_path"].increments.sum()
    assert tr.final.mean() == pytest.approx(0.4 * (0.3 * 0.5 + 0.1 * W), abs=1e-14)


def test_step_controlled_matches_by_hand(grid64):
    noise = NoiseModel.trigonometric(2, 1.0, b0=1.0)
    u = Field.constant(grid64, 0.0)
    out = step_controlled(u, FluxModel.zero(), noise, [1.0, 2.0], 0.04, [0.5, -0.5], 0.1)
    x = grid64.centers[..., 0]
    expected = (0.1 * 1.0 + 0.2 * 0.5) + (0.1 * 2.0 + 0.2 * (-0.5)) * 0.5 * np.cos(2 * np.pi * x)
    assert np.allclose(out.values, expected, atol=1e-15)
    with pytest.raises(DomainError):
        step_controlled(u, FluxModel.zero(), noise, [1.0], 0.04, [0.5, -0.5], 0.1)


def test_noise_path_override_and_shape_check(grid64, burgers, trig3, sine64):
    h = Control.zeros(3, 0.1, 5)
    tr = solve_stochastic(sine64, burgers, trig3, h, 0.01, seed=4)
    again = solve_stochastic(sine64, burgers, trig3, h, 0.01, noise_path=tr.meta["noise_path"])
    assert np.array_equal(tr.values, again.values)
    bad = sample_increments(4, 3, 3, 0.01)
    with pytest.raises(DomainError):
        solve_stochastic(sine64, burgers, trig3, h, 0.01, noise_path=bad)


def test_batch_rows_match_single_runs(grid64, burgers, trig3, sine64):
    h = Control.constant([0.4, 0.0, 0.1], 0.2, 8)
    cfg = SolverConfig(store="nodes")
    seeds = [derive_seed(3, i) for i in range(5)]
    batch = simulate_batch(sine64, burgers, trig3, h, 0.02, cfg, seeds, chunk=2)
    for i, s in enumerate(seeds):
        single = solve_stochastic(sine64, burgers, trig3, h, 0.02, cfg=cfg, seed=s)
        assert np.array_equal(batch["final"][i], single.final.values)


def test_batch_independent_of_threads(monkeypatch, grid64, burgers, trig3, sine64):
    h = Control.zeros(3, 0.1, 5)
    seeds = [derive_seed(8, i) for i in range(9)]
    out = []
    for n in ("1", "4"):
        monkeypatch.setenv("SCLAB_THREADS", n)
        out.append(simulate_batch(sine64, burgers, trig3, h, 0.05, None, seeds, chunk=2)["final"])
    assert np.array_equal(out[0], out[1])


def test_sample_batch_stacks_single_paths():
    seeds = [11, 12, 13]
    b = sample_batch(seeds, 6, 2, 0.1)
    for i, s in enumerate(seeds):
        assert np.array_equal(b[i], sample_increments(s, 6, 2, 0.1).increments)


def test_negative_eps_rejected(grid64, burgers, trig3, sine64):
    with pytest.raises(DomainError):
        solve_stochastic(sine64, burgers, trig3, None, -0.1, T=0.1)


def test_truncation_and_viscosity_from_config():
    g = TorusGrid(1, 32)
    u0 = Field.from_function(g, lambda x: np.sin(2 * np.pi * x))
    noise = NoiseModel.additive(0.3)
    h = Control.zeros(1, 0.1, 5)
    cfg = SolverConfig(viscosity_eta=0.01, truncation_R=5.0)
    tr = solve_stochastic(u0, FluxModel.burgers(), noise, h, 0.01, cfg=cfg, seed=2)
    assert tr.meta["eta"] == 0.01
    assert tr.diagnostics["dissipation"] > 0
