import json

import numpy as np
import pytest

from deepboots.theory import (
    CHECKS,
    DriftScenario,
    EnsembleSimConfig,
    TheoryInputError,
    alternating_identity_residual,
    alternating_signs,
    ambiguity_identity_residual,
    bias_variance_decompose,
    block_variance_sim,
    ensemble_bias_var,
    mse_gap,
    mse_gap_simulation,
    run_check,
)


# -- bias / variance -------------------------------------------------------------


def test_constant_estimator():
    bv = bias_variance_decompose(np.full(100, 2.5), 1.0, 0.0)
    assert bv.variance == 0.0 and bv.bias_squared == pytest.approx(2.25)


def test_unbiased_variance_estimate():
    rng = np.random.default_rng(0)
    bv = bias_variance_decompose(rng.normal(3.0, np.sqrt(2.0), 100_000), 3.0, 1.0)
    assert abs(bv.variance - 2.0) <= 0.06


@pytest.mark.parametrize("seed", range(10))
def test_identity_sides_within_3se(seed):
    rng = np.random.default_rng(seed)
    bv = bias_variance_decompose(rng.normal(1.5, 1.0, 50_000), 1.0, 0.7, seed=seed + 100)
    assert abs(bv.lhs - bv.rhs) <= 3 * bv.standard_error


def test_identity_with_supplied_noise_is_exact_shift():
    rng = np.random.default_rng(1)
    y_hat, noise = rng.normal(size=1000), rng.normal(0, 0.5, 1000)
    bv = bias_variance_decompose(y_hat, 0.2, 0.25, noise=noise)
    # the sides differ exactly by mean(noise^2) - sigma^2
    assert bv.rhs - bv.lhs == pytest.approx(np.mean(noise**2) - 0.25, abs=1e-12)


def test_bias_variance_needs_two_samples():
    with pytest.raises(TheoryInputError):
        bias_variance_decompose(np.ones(1), 0.0, 1.0)


# -- exact identities --------------------------------------------------------------


def test_ambiguity_examples():
    res, amb = ambiguity_identity_residual(0.3, [1.7], [1.0])
    assert res == 0.0 and amb == 0.0
    res, amb = ambiguity_identity_residual(0.3, [1.2, 1.2, 1.2], [0.2, 0.3, 0.5])
    assert amb == 0.0 and res < 1e-12
    with pytest.raises(TheoryInputError, match="sum to 1"):
        ambiguity_identity_residual(0.0, [1.0, 2.0], [0.5, 0.6])
    with pytest.raises(TheoryInputError, match="non-negative"):
        ambiguity_identity_residual(0.0, [1.0, 2.0], [1.5, -0.5])


def test_ambiguity_random_instances():
    rep = run_check("eq6", trials=10_000)
    assert rep.passed
    assert rep.estimates["max_residual"] < 1e-12 and rep.estimates["min_ambiguity"] >= 0.0


def test_alternating_signs():
    np.testing.assert_array_equal(alternating_signs(1), [1.0])
    np.testing.assert_array_equal(alternating_signs(4), [-1.0, 1.0, -1.0, 1.0])
    np.testing.assert_array_equal(alternating_signs(3), [1.0, -1.0, 1.0])


def test_alternating_examples():
    rng = np.random.default_rng(0)
    # L = 2: w = (-a1, a2) with a2 - a1 = 1
    assert alternating_identity_residual(0.4, rng.normal(size=2), [0.5, 1.5], 2) < 1e-12
    assert alternating_identity_residual(0.4, [1.3], [1.0], 1) == pytest.approx(
        ambiguity_identity_residual(0.4, [1.3], [1.0])[0], abs=1e-15
    )
    assert alternating_identity_residual(0.0, [0.0, 0.0, 0.0], [0.2, 0.4, 1.2], 3) == 0.0
    with pytest.raises(TheoryInputError, match="sum to 1"):
        alternating_identity_residual(0.0, [1.0, 2.0], [0.5, 0.5], 2)


def test_alternating_random_instances():
    assert run_check("eq9", trials=10_000).estimates["max_residual"] < 1e-12


# -- averaging ensembles -------------------------------------------------------------


def test_single_member_ratio_is_one():
    r = ensemble_bias_var(1, trials=10_000)
    assert r.var_ratio == 1.0 and r.bias_ratio == 1.0


def test_four_members_quarter_variance():
    r = ensemble_bias_var(4, trials=100_000)
    assert abs(r.var_ratio - 0.25) <= 0.02 and abs(r.bias_ratio - 1.0) <= 0.02


@pytest.mark.parametrize("n", [1, 2, 3, 8, 16])
@pytest.mark.parametrize("dist", ["normal", "exponential"])
def test_variance_never_increases(n, dist):
    r = ensemble_bias_var(n, mean=2.0, trials=20_000, seed=n, distribution=dist)
    assert r.var_ratio <= 1 + 3 * r.var_ratio_se
    assert abs(r.bias_ratio - 1.0) <= 3 * r.bias_ratio_se + 1e-12


def test_ensemble_rejects_bad_input():
    with pytest.raises(TheoryInputError):
        ensemble_bias_var(0)
    with pytest.raises(TheoryInputError):
        ensemble_bias_var(2, trials=100)


# -- covariate shift -------------------------------------------------------------


def test_mse_gap_examples():
    assert mse_gap(1, 0.3, 2.0, 1.0) == 0.0
    assert mse_gap(5, 1.0, 2.0, 1.0) == 0.0
    assert mse_gap(2, 0.5, 1.0, 1.0) == 0.25


def test_mse_gap_grid_non_negative():
    vals = [
        mse_gap(L, a, c2, s)
        for L in range(1, 11)
        for a in np.linspace(0, 1, 10)
        for c2 in np.linspace(0, 4, 5)
        for s in (0.5, 2.0)
    ]
    assert len(vals) == 1000 and min(vals) >= 0.0


def test_mse_gap_rejects_bad_input():
    for args in ((0, 0.5, 1, 1), (2, 1.5, 1, 1), (2, 0.5, -1, 1)):
        with pytest.raises(TheoryInputError):
            mse_gap(*args)


@pytest.mark.parametrize("L,rho", [(2, 0.0), (4, 0.3), (8, 0.9)])
def test_drift_simulation(L, rho):
    sc = DriftScenario(1.0, 2.0, L, rho, samples=100_000)
    assert sc.c2 == 2.0
    sim = mse_gap_simulation(sc, seed=L)
    assert abs(sim.gap - sim.predicted_gap) <= 3 * sim.gap_se
    assert sim.single_mse >= sim.ensemble_mse - 3 * sim.gap_se


# -- block variance ------------------------------------------------------------------


def test_block_variance_zero_covariance():
    r = block_variance_sim(EnsembleSimConfig(2, 1.0, 1.0, 0.0, trials=1_000_000))
    assert abs(r.empirical_var - 2.0) <= 0.01
    assert r.proof_chain_value == 2.0 and r.exact_var == 2.0


def test_block_variance_positive_covariance_numbers():
    r = block_variance_sim(EnsembleSimConfig(2, 1.0, 1.0, 0.5, trials=1_000_000))
    assert r.subtract_bound == 3.0 and r.add_formula == 3.5
    assert r.exact_var == pytest.approx(1.0)
    assert abs(r.empirical_var - r.exact_var) <= 3 * r.empirical_se
    assert r.empirical_var < r.subtract_bound < r.add_formula
    # the derivation's pre-inequality value counts the cross term once
    assert r.proof_chain_value == 1.5


@pytest.mark.parametrize("L", [2, 3, 4, 5, 6, 8])
@pytest.mark.parametrize("mu", [0.1, 0.5, 0.9])
def test_alternating_beats_addition_when_correlated(L, mu):
    for seed in range(3):
        r = block_variance_sim(EnsembleSimConfig(L, 1.0, 1.0, mu, trials=50_000, seed=seed))
        assert r.alternating_var < r.add_var


@pytest.mark.parametrize("L", [2, 4, 6, 8])
@pytest.mark.parametrize("mu", [0.0, 0.3, 0.9])
def test_bound_holds_for_even_L(L, mu):
    r = block_variance_sim(EnsembleSimConfig(L, 1.0, 1.0, mu, trials=100_000))
    assert r.empirical_var <= r.subtract_bound + 3 * r.empirical_se


def test_bound_fails_for_odd_L():
    # with L = 3 the signed weights sum to one block's worth, Var = 3 nu - 2 mu
    r = block_variance_sim(EnsembleSimConfig(3, 1.0, 1.0, 0.0, trials=100_000))
    assert r.exact_var == pytest.approx(3.0)
    assert r.empirical_var > r.subtract_bound


def test_block_config_validation():
    with pytest.raises(TheoryInputError, match="positive semidefinite"):
        EnsembleSimConfig(3, mu=-0.9)
    with pytest.raises(TheoryInputError, match="positive semidefinite"):
        EnsembleSimConfig(3, mu=1.5)
    with pytest.raises(TheoryInputError, match="L must be"):
        EnsembleSimConfig(1)
    with pytest.raises(TheoryInputError):
        EnsembleSimConfig(2, nu=0.0)


def test_singular_covariance_allowed():
    r = block_variance_sim(EnsembleSimConfig(2, 1.0, 1.0, 1.0, trials=10_000))
    assert r.alternating_var == pytest.approx(0.0, abs=1e-20)


def test_simulation_is_seeded():
    cfg = EnsembleSimConfig(4, 0.7, 1.0, 0.2, trials=30_000, seed=9)
    assert block_variance_sim(cfg) == block_variance_sim(cfg)


# -- reports ---------------------------------------------------------------------


@pytest.mark.parametrize("name", CHECKS)
def test_default_checks_pass_and_serialize(name):
    rep = run_check(name)
    assert rep.passed, rep.checks
    d = json.loads(rep.to_json())
    assert d["passed"] is True and d["name"] == name
    assert set(d) >= {"inputs", "estimates", "bounds", "standard_errors", "checks"}


def test_run_check_parameters():
    assert run_check("th1", N=4).estimates["var_ratio"] == pytest.approx(0.25, abs=0.02)
    assert run_check("th1", N=1).estimates["var_ratio"] == 1.0
    assert run_check("th1_5", L=2, alpha=0.5).estimates["closed_form_gap"] == 0.25
    assert run_check("th2", L=4, mu=0.2, trials=10_000).inputs["L"] == 4
    with pytest.raises(TheoryInputError):
        run_check("th3")
