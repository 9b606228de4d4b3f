import math
import sys

import numpy as np
import pytest

from msved.common.config import TrainingConfig
from msved.common.errors import ConfigurationError, ContractError, DimensionError, SchemaError
from msved.core import tensor as T
from msved.core.gradcheck import finite_difference_check
from msved.core.stochastic import (
    GaussianPosterior,
    NoiseSource,
    anneal_state_at,
    anneal_step,
    gaussian_reparam,
    gumbel_max_sample,
    gumbel_softmax,
    kl_to_standard_normal,
    relaxed_tag_sample,
    sample_gumbel,
    uniform_tag_log_prior,
)

# chi-square critical values at significance 0.001, by degrees of freedom
CHI2_CRITICAL = {1: 10.828, 2: 13.816, 3: 16.266, 4: 18.467, 5: 20.515, 6: 22.458, 7: 24.322, 8: 26.124, 9: 27.877}


def posterior(mu, log_var):
    return GaussianPosterior(T.constant(np.asarray(mu, float)), T.constant(np.asarray(log_var, float)))


def test_reparam_at_the_prior_is_identity():
    eps = np.array([0.3, -1.2, 2.5])
    z = gaussian_reparam(posterior(np.zeros(3), np.zeros(3)), eps)
    np.testing.assert_array_equal(z.values, eps)


def test_reparam_formula():
    sigma = np.array([0.5, 0.1])
    z = gaussian_reparam(posterior([1.0, 2.0], 2.0 * np.log(sigma)), np.array([2.0, -1.0]))
    np.testing.assert_allclose(z.values, [2.0, 1.9], atol=1e-12)


def test_reparam_rejects_mismatched_noise():
    with pytest.raises(ContractError):
        gaussian_reparam(posterior([0.0, 0.0], [0.0, 0.0]), np.zeros(3))
    with pytest.raises(DimensionError):
        posterior([0.0], [0.0, 0.0])


def test_reparam_gradients_reach_mu_and_log_var_only():
    mu = T.parameter([0.5, -0.5])
    log_var = T.parameter([0.1, -0.3])
    eps = np.array([1.5, 0.5])
    T.backward(T.sum(gaussian_reparam(GaussianPosterior(mu, log_var), eps)))
    np.testing.assert_allclose(mu.grad, [1.0, 1.0])
    np.testing.assert_allclose(log_var.grad, 0.5 * np.exp(0.5 * log_var.values) * eps)


def test_reparam_monte_carlo_mean():
    mu, sigma = np.array([0.7, -1.3]), np.array([0.4, 2.0])
    n = 100_000
    noise = NoiseSource(5)
    z = gaussian_reparam(
        posterior(np.tile(mu, (n, 1)), np.tile(2.0 * np.log(sigma), (n, 1))), noise.normal((n, 2))
    )
    assert np.all(np.abs(z.values.mean(axis=0) - mu) < 3.0 * sigma / math.sqrt(n))


def test_kl_at_the_prior_is_zero():
    assert kl_to_standard_normal(posterior(np.zeros(4), np.zeros(4))).item() == 0.0


def test_kl_of_unit_shift():
    assert kl_to_standard_normal(posterior([1.0], [0.0])).item() == pytest.approx(0.5, abs=1e-15)


def test_kl_is_nonnegative():
    rng = np.random.default_rng(0)
    kl = kl_to_standard_normal(posterior(rng.normal(size=(200, 5)), rng.normal(scale=2.0, size=(200, 5))))
    assert kl.shape == (200,)
    assert np.all(kl.values >= 0.0)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(1)
    mu, log_var = rng.uniform(-1, 1, size=3), rng.uniform(-1, 1, size=3)
    exact = kl_to_standard_normal(posterior(mu, log_var)).item()

    eps = rng.standard_normal((1_000_000, 3))
    z = mu + np.exp(0.5 * log_var) * eps
    log_q = np.sum(-0.5 * log_var - 0.5 * eps**2, axis=1)
    log_p = np.sum(-0.5 * z**2, axis=1)
    assert abs(np.mean(log_q - log_p) - exact) < 1e-2


def test_gumbel_fixed_points():
    assert sample_gumbel(1.0 / math.e) == pytest.approx(0.0, abs=1e-15)
    assert sample_gumbel(math.exp(-math.e)) == pytest.approx(-1.0, abs=1e-12)


def test_gumbel_mean_is_euler_mascheroni():
    g = NoiseSource(2).gumbel(1_000_000)
    assert abs(g.mean() - 0.5772156649) < 0.01


def test_gumbel_clamps_boundary_draws():
    g = sample_gumbel([0.0, 1.0])
    assert np.all(np.isfinite(g))
    with pytest.raises(ContractError):
        sample_gumbel([1.5])
    with pytest.raises(ContractError):
        sample_gumbel([np.nan])


def test_gumbel_max_degenerate_distribution():
    rng = np.random.default_rng(3)
    log_probs = np.array([0.0, -np.inf, -np.inf])
    for _ in range(1000):
        assert gumbel_max_sample(log_probs, rng=rng) == 0


def test_gumbel_max_fair_coin():
    rng = np.random.default_rng(4)
    n = 100_000
    hits = sum(gumbel_max_sample(np.log([0.5, 0.5]), rng=rng) == 0 for _ in range(n))
    assert abs(hits / n - 0.5) < 3.0 * math.sqrt(0.25 / n)


def test_gumbel_max_ties_go_to_lowest_index():
    assert gumbel_max_sample([0.0, 0.0, 0.0], noise=[1.0, 1.0, 1.0]) == 0
    assert gumbel_max_sample([-1.0, 0.0, 0.0], noise=[1.0, 2.0, 2.0]) == 1


def test_gumbel_max_rejects_empty_support():
    with pytest.raises(ContractError):
        gumbel_max_sample([-np.inf, -np.inf], rng=np.random.default_rng(0))
    with pytest.raises(ContractError):
        gumbel_max_sample([0.0, np.nan], noise=[0.0, 0.0])


@pytest.mark.parametrize("n_classes", [2, 5, 10])
def test_gumbel_max_is_an_exact_categorical_sampler(n_classes):
    rng = np.random.default_rng(100 + n_classes)
    pi = 0.9 * rng.dirichlet(np.ones(n_classes)) + 0.1 / n_classes
    log_pi = np.log(pi)
    n = 100_000
    noise = NoiseSource(rng)
    counts = np.zeros(n_classes)
    for g in noise.gumbel((n, n_classes)):
        counts[gumbel_max_sample(log_pi, noise=g)] += 1
    expected = n * pi
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < CHI2_CRITICAL[n_classes - 1]


def test_gumbel_softmax_high_temperature_is_uniform():
    rng = np.random.default_rng(6)
    logits = T.constant(rng.normal(size=(10, 6)))
    y = gumbel_softmax(logits, 1e6, NoiseSource(7).gumbel((10, 6)))
    np.testing.assert_allclose(y.values, np.full((10, 6), 1 / 6), atol=1e-3)


def test_gumbel_softmax_low_temperature_is_nearly_one_hot():
    rng = np.random.default_rng(8)
    n = 10_000
    logits = T.constant(rng.normal(size=(n, 5)))
    y = gumbel_softmax(logits, 0.001, NoiseSource(9).gumbel((n, 5)))
    assert np.mean(y.values.max(axis=-1) > 0.999) >= 0.95


def test_gumbel_softmax_argmax_matches_gumbel_max():
    rng = np.random.default_rng(10)
    n = 10_000
    logits = rng.normal(scale=2.0, size=(n, 4))
    log_probs = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
    noise = NoiseSource(11).gumbel((n, 4))
    taus = rng.uniform(0.1, 10.0, size=n)
    for lp, g, tau in zip(log_probs, noise, taus):
        y = gumbel_softmax(T.constant(lp[None, :]), float(tau), g[None, :])
        assert int(np.argmax(y.values[0])) == gumbel_max_sample(lp, noise=g)


def test_gumbel_softmax_is_a_distribution_with_correct_gradient():
    rng = np.random.default_rng(12)
    logits = T.parameter(rng.normal(size=(3, 4)))
    noise = NoiseSource(13).gumbel((3, 4))
    weights = T.constant(rng.normal(size=(3, 4)))
    for tau in (0.5, 1.0, 3.0):
        y = gumbel_softmax(logits, tau, noise)
        assert np.all(y.values >= 0.0)
        np.testing.assert_allclose(y.values.sum(axis=-1), np.ones(3), atol=1e-9)
        error = finite_difference_check(lambda t: T.sum(T.mul(gumbel_softmax(t, tau, noise), weights)), logits)
        assert error < 1e-4
    with pytest.raises(ContractError):
        gumbel_softmax(logits, 0.0, noise)


def test_relaxed_tag_sample_draws_categories_in_order():
    rng = np.random.default_rng(14)
    log_probs = [T.log_softmax(T.constant(rng.normal(size=(2, n)))) for n in (3, 5)]
    relaxed = relaxed_tag_sample(log_probs, 0.7, NoiseSource(15))
    assert relaxed.tau == 0.7
    assert [y.shape for y in relaxed.samples] == [(2, 3), (2, 5)]

    noise = NoiseSource(15)
    for y, lq in zip(relaxed.samples, log_probs):
        expected = gumbel_softmax(lq, 0.7, noise.gumbel(lq.shape))
        np.testing.assert_array_equal(y.values, expected.values)


def test_uniform_tag_log_prior():
    assert uniform_tag_log_prior([2]) == pytest.approx(-math.log(2))
    assert uniform_tag_log_prior([2, 3, 4]) == pytest.approx(-math.log(24))
    rng = np.random.default_rng(14)
    sizes = [2, 3, 4]
    y = [rng.integers(n) for n in sizes]
    brute = sum(np.log(np.full(n, 1.0 / n))[label] for n, label in zip(sizes, y))
    assert uniform_tag_log_prior(sizes) == pytest.approx(brute, abs=1e-12)


def test_uniform_tag_log_prior_rejects_bad_schemas():
    with pytest.raises(SchemaError):
        uniform_tag_log_prior([])
    with pytest.raises(SchemaError):
        uniform_tag_log_prior([3, 0])


def test_lambda_ramp():
    config = TrainingConfig(ramp_steps=100, tau_rate=0.01)
    assert anneal_state_at(0, config).lam == 0.0
    assert anneal_state_at(50, config).lam == 0.1
    assert anneal_state_at(100, config).lam == 0.2
    assert anneal_state_at(10_000, config).lam == 0.2


def test_schedules_are_monotone_and_bounded():
    config = TrainingConfig(ramp_steps=37, tau_rate=0.02)
    states = [anneal_state_at(0, config)]
    for _ in range(500):
        states.append(anneal_step(states[-1], config))
    lams = [s.lam for s in states]
    taus = [s.tau for s in states]
    assert states[0].tau == 1.0
    assert all(a <= b for a, b in zip(lams, lams[1:]))
    assert all(a >= b for a, b in zip(taus, taus[1:]))
    assert max(lams) <= config.lambda_m and min(taus) == config.tau_min
    assert [s.step for s in states] == list(range(501))


def test_schedules_are_pure_functions_of_step():
    config = TrainingConfig(ramp_steps=10, tau_rate=0.05)
    state = anneal_state_at(0, config)
    for _ in range(25):
        state = anneal_step(state, config)
    assert state == anneal_state_at(25, config)


def test_zero_length_ramp_starts_at_the_cap():
    assert anneal_state_at(0, TrainingConfig(ramp_steps=0, tau_rate=0.0)).lam == 0.2


def test_unresolved_schedules_are_rejected():
    with pytest.raises(ConfigurationError):
        anneal_state_at(3, TrainingConfig())


def test_resolved_tau_reaches_floor_a_third_of_the_way():
    config = TrainingConfig(max_epochs=30).resolve_schedules(steps_per_epoch=100)
    assert config.ramp_steps == 200
    assert anneal_state_at(1000, config).tau == pytest.approx(0.5, rel=1e-9)
    assert anneal_state_at(500, config).tau > 0.5


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
