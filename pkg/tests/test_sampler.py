from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from postsbc.datasets import hierarchical_regime
from postsbc.models import HierarchicalModel, NormalModel, build_model
from postsbc.rng import substream
from postsbc.sampler.diagnostics import ess_bulk, mcse_mean
from postsbc.sampler.gradients import finite_diff_grad
from postsbc.sampler.hmc import (
    DualAveraging,
    SamplerConfig,
    SamplerError,
    hmc_chain,
    leapfrog,
    metropolis_accept_prob,
    rwm_chain,
)
from postsbc.sampler.target import Target


def std_normal(dim=1, scale=1.0):
    return Target.from_callables(
        dim, lambda x: -0.5 * float(np.sum((x / scale) ** 2)), lambda x: -x / scale**2
    )


# -- finite differences --------------------------------------------------------


def test_fd_quadratic():
    assert finite_diff_grad(lambda x: float(x[0] ** 2), [3.0])[0] == pytest.approx(6.0, abs=1e-6)


def test_fd_constant_is_zero():
    assert np.all(np.abs(finite_diff_grad(lambda x: 4.2, np.ones(5))) < 1e-8)


def test_fd_non_finite_probe_names_coordinate():
    f = lambda x: math.log(x[1]) if x[1] > 1.0 else -math.inf  # noqa: E731
    with pytest.raises(FloatingPointError, match="coordinate 1"):
        finite_diff_grad(f, [0.0, 1.0 + 1e-7])


@pytest.mark.parametrize("centered", [True, False])
def test_hierarchical_analytic_gradient_matches_fd(centered):
    m = HierarchicalModel(J=8, centered=centered)
    data = m.simulate(m.prior_sample(substream(1)), substream(2))
    target = m.target(data)
    rng = substream(3)
    for _ in range(100):
        u = rng.uniform(-2, 2, size=m.dim)
        _, g = target.logp_grad(u)
        fd = finite_diff_grad(target.logp, u)
        assert np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))) < 1e-4


def test_normal_gradient_matches_fd():
    m = NormalModel()
    target = m.target(m.make_data([0.5, -1.0]))
    for x in (-2.0, 0.0, 1.3):
        _, g = target.logp_grad(np.array([x]))
        assert g[0] == pytest.approx(finite_diff_grad(target.logp, [x])[0], rel=1e-6)


# -- leapfrog ------------------------------------------------------------------


def test_leapfrog_identity_limit():
    q, p = np.array([0.3, -1.0]), np.array([1.0, 2.0])
    q1, p1 = leapfrog(lambda x: -x, q, p, 1e-12, 1)
    assert np.allclose(q1, q, atol=1e-9) and np.allclose(p1, p, atol=1e-9)


def test_harmonic_oscillator_half_period():
    q1, _ = leapfrog(lambda x: -x, np.array([1.0]), np.array([0.0]), 0.01, 314)
    assert q1[0] == pytest.approx(math.cos(3.14), abs=1e-2)


def _model_grad(model_id):
    m = build_model(model_id, **({"J": 4} if model_id.startswith("hier") else {}))
    if model_id == "lotka-volterra":
        from postsbc.datasets import synthetic_pelts

        data = synthetic_pelts()
    else:
        data = m.simulate(m.prior_sample(substream(5)), substream(6))
    target = m.target(data)
    return m, lambda x: target.logp_grad(x)[1]


@pytest.mark.parametrize("model_id", ["normal", "hierarchical-centered", "hierarchical-noncentered", "lotka-volterra"])
@given(seed=st.integers(0, 2**31))
def test_leapfrog_reversible_for_every_model(model_id, seed):
    m, grad = _model_grad(model_id)
    rng = substream(seed)
    q = rng.uniform(-0.5, 0.5, size=m.dim)
    p = rng.standard_normal(m.dim)
    q1, p1 = leapfrog(grad, q, p, 1e-3, 5)
    q2, p2 = leapfrog(grad, q1, -p1, 1e-3, 5)
    assert np.allclose(q2, q, atol=1e-10)
    assert np.allclose(-p2, p, atol=1e-10)
    q3, p3 = leapfrog(grad, q, p, 1e-12, 1)
    assert np.allclose(q3, q, atol=1e-9) and np.allclose(p3, p, atol=1e-9)


def test_leapfrog_rejects_bad_arguments():
    with pytest.raises(ValueError):
        leapfrog(lambda x: -x, [0.0], [0.0], 0.0, 1)


# -- hmc -----------------------------------------------------------------------


def test_hmc_standard_normal_moments():
    cfg = SamplerConfig(target_accept=0.8)
    chains = np.stack([hmc_chain(std_normal(), cfg, substream(1, c)).draws[:, 0] for c in range(4)])
    assert abs(chains.mean()) < 3 * mcse_mean(chains)
    assert 0.85 <= chains.var() <= 1.15


@pytest.mark.parametrize("delta", [0.8, 0.9, 0.99])
def test_dual_averaging_reaches_target_acceptance(delta):
    target = std_normal(dim=10, scale=np.linspace(0.5, 2.0, 10))
    chain = hmc_chain(target, SamplerConfig(chains=1, target_accept=delta, path_length_jitter=0.2), substream(2))
    assert delta - 0.1 <= chain.mean_accept <= min(1.0, delta + 0.1)


def test_hmc_nan_target_fails_initialization():
    bad = Target.from_callables(2, lambda x: math.nan, lambda x: np.zeros(2))
    with pytest.raises(SamplerError):
        hmc_chain(bad, SamplerConfig(warmup_draws=10, keep_draws=10), substream(0))


def test_hmc_deterministic_given_seed():
    m = HierarchicalModel(J=5, centered=False)
    target = m.target(m.simulate(m.prior_sample(substream(1)), substream(2)))
    cfg = SamplerConfig(warmup_draws=200, keep_draws=100)
    a = hmc_chain(target, cfg, substream(9, 0))
    b = hmc_chain(target, cfg, substream(9, 0))
    assert np.array_equal(a.draws, b.draws)
    assert a.divergence_count <= cfg.keep_draws
    assert np.all(np.isfinite(a.draws))


def test_mass_matrix_adapts_to_scales():
    target = std_normal(dim=2, scale=np.array([0.1, 10.0]))
    chain = hmc_chain(target, SamplerConfig(target_accept=0.8), substream(4))
    ratio = chain.mass_diag[0] / chain.mass_diag[1]
    # mass is the inverse variance: (1/0.01) / (1/100) = 1e4
    assert 1e3 < ratio < 1e5


def test_divergences_grow_with_step_size_on_funnel():
    m = HierarchicalModel(J=20, centered=True)
    target = m.target(hierarchical_regime(0.06, 1.96, J=20))
    counts = []
    for eps in (0.05, 0.5):
        cfg = SamplerConfig(warmup_draws=0, keep_draws=300, fixed_step_size=eps, path_length=1.0)
        counts.append(hmc_chain(target, cfg, substream(6)).divergence_count)
    assert counts[1] > counts[0]


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(target_accept=1.0)
    with pytest.raises(ValueError):
        SamplerConfig(chains=0)
    with pytest.raises(ValueError):
        SamplerConfig(path_length_jitter=1.5)


def test_dual_averaging_moves_step_toward_target():
    da = DualAveraging(1.0, 0.8)
    for _ in range(50):
        da.update(0.2)  # acceptance far too low
    assert da.final < 1.0


# -- random-walk Metropolis ----------------------------------------------------


def test_rwm_standard_normal_moments():
    cfg = SamplerConfig(warmup_draws=2000, keep_draws=4000)
    chains = np.stack([rwm_chain(std_normal(), cfg, substream(3, c)).draws[:, 0] for c in range(4)])
    assert abs(chains.mean()) < 3 * mcse_mean(chains)
    assert 0.8 <= chains.var() <= 1.2


def test_rwm_scale_equivariance():
    cfg = SamplerConfig(warmup_draws=3000, keep_draws=10)
    s1 = rwm_chain(std_normal(scale=1.0), cfg, substream(5)).step_size
    s10 = rwm_chain(std_normal(scale=10.0), cfg, substream(5)).step_size
    assert 10 / 1.5 <= s10 / s1 <= 10 * 1.5


def test_metropolis_two_point_analog():
    # states with masses 0.2 and 0.8: moves up always accepted, down with ratio 1/4
    assert metropolis_accept_prob(math.log(0.2), math.log(0.8)) == 1.0
    assert metropolis_accept_prob(math.log(0.8), math.log(0.2)) == pytest.approx(0.25)
    assert metropolis_accept_prob(0.0, -math.inf) == 0.0


def test_hmc_and_rwm_agree_on_conjugate_posterior():
    m = NormalModel()
    target = m.target(m.make_data([0.4, 1.1, -0.2]))
    h = np.stack([hmc_chain(target, SamplerConfig(target_accept=0.8), substream(7, c)).draws[:, 0] for c in range(4)])
    r = np.stack([rwm_chain(target, SamplerConfig(keep_draws=4000), substream(8, c)).draws[:, 0] for c in range(4)])
    combined = math.hypot(mcse_mean(h), mcse_mean(r))
    assert abs(h.mean() - r.mean()) < 3 * combined
    assert ess_bulk(h) > 1000
