import numpy as np
import pytest

from earlkit.baselines import (
    SearchConfig,
    aipwe_direct_search,
    contrast_rule,
    owl_fit,
    qlearning_fit,
)
from earlkit.core import ConfigError, Dataset, FeatureMap, LinearRule
from earlkit.earl import EarlConfig, earl_fit
from earlkit.nuisance import OutcomeModel, PropensityModel, fit_outcome
from earlkit.sim import (
    ModelSpec,
    ScenarioSpec,
    contrast,
    generate_scenario,
    optimal_rule,
    true_propensity_model,
    true_value_mc,
)
from earlkit.value import value_aipwe
from earlkit.weights import dr_weights


def test_contrast_rule_constant_arms():
    # Q(x, 1) = 2 and Q(x, -1) = 1 for every x
    fm = FeatureMap(2, (("1",), ("a",)))
    m = OutcomeModel(fm, np.array([1.5, 0.5]))
    rule = contrast_rule(m)
    X = np.random.default_rng(0).normal(size=(20, 2))
    assert np.all(rule.decide_many(X) == 1)


def test_contrast_rule_tie_goes_to_plus_one():
    fm = FeatureMap(2, (("1",), ("x", 0)))
    m = OutcomeModel(fm, np.array([3.0, -1.0]))  # no treatment terms at all
    rule = contrast_rule(m)
    X = np.random.default_rng(1).normal(size=(10, 2))
    assert np.all(rule.decide_many(X) == 1)


def test_qlearning_recovers_true_contrast_sign():
    d = generate_scenario(ScenarioSpec(2, 50000), 42)
    fit = qlearning_fit(d, ModelSpec("CC").nuisance_spec(2).outcome_map)
    grid = np.random.default_rng(7).normal(size=(10000, 10))
    truth = np.where(contrast(grid) >= 0, 1, -1)
    agreement = np.mean(fit.rule.decide_many(grid) == truth)
    assert agreement >= 0.98


def test_qlearning_invariant_to_treatment_free_shift():
    d = generate_scenario(ScenarioSpec(2, 50000), 43)
    outcome_map = ModelSpec("CC").nuisance_spec(2).outcome_map
    base = qlearning_fit(d, outcome_map)
    # add a treatment-free mean shift inside the model span
    g = 3.0 * d.X[:, 2] - 2.0 * d.X[:, 6] ** 2
    shifted = Dataset(d.X, d.A, d.Y + g)
    moved = qlearning_fit(shifted, outcome_map)
    grid = np.random.default_rng(8).normal(size=(10000, 10))
    agreement = np.mean(base.rule.decide_many(grid) == moved.rule.decide_many(grid))
    assert agreement >= 0.99


def test_owl_objective_is_pure_delegation():
    rng = np.random.default_rng(3)
    n = 150
    d = Dataset(
        rng.normal(size=(n, 3)),
        np.where(rng.random(n) < 0.5, 1, -1),
        np.abs(rng.normal(size=n)),  # nonnegative: no shift applied
    )
    prop = PropensityModel(FeatureMap.linear(3), rng.normal(size=4), clip=(0.05, 0.95))
    cfg = EarlConfig(loss="hinge", lam=0.2, seed=4)
    bl = owl_fit(d, prop, cfg)
    assert bl.diagnostics["outcome_shift"] == 0.0
    ref = earl_fit(d, dr_weights(d, prop, None), cfg)
    assert abs(bl.diagnostics["objective_value"] - ref.objective_value) < 1e-12
    assert bl.rule.beta0 == ref.rule.beta0
    assert np.array_equal(bl.rule.beta, ref.rule.beta)


def test_owl_shifts_negative_outcomes():
    rng = np.random.default_rng(5)
    n = 60
    d = Dataset(rng.normal(size=(n, 2)), np.where(rng.random(n) < 0.5, 1, -1), rng.normal(size=n) - 4.0)
    prop = PropensityModel(FeatureMap.intercept_only(2), np.array([0.0]))
    bl = owl_fit(d, prop, EarlConfig(loss="hinge", lam=0.1))
    assert bl.diagnostics["outcome_shift"] == float(np.min(d.Y))
    assert bl.diagnostics["outcome_shift"] < 0


def test_owl_symmetric_weights_stay_at_zero():
    # equal outcomes and an exactly balanced design mirrored across arms
    rng = np.random.default_rng(6)
    X = rng.normal(size=(20, 2))
    d = Dataset(np.vstack([X, X]), np.concatenate([np.ones(20), -np.ones(20)]), np.full(40, 3.0))
    prop = PropensityModel(FeatureMap.intercept_only(2), np.array([0.0]))
    bl = owl_fit(d, prop, EarlConfig(loss="hinge", lam=0.5))
    assert bl.rule.beta0 == 0.0
    assert np.all(bl.rule.beta == 0.0)


def test_owl_value_close_to_optimum_with_known_propensity():
    d = generate_scenario(ScenarioSpec(2, 2000), 100)
    prop = true_propensity_model(2)
    bl = owl_fit(d, prop, EarlConfig(loss="hinge", lam=0.01, seed=0))
    v = true_value_mc(bl.rule, 2, 200000, 7)
    v_star = true_value_mc(optimal_rule(), 2, 200000, 7)
    assert v_star - v < 0.5


def _search_setup(seed=11, n=300):
    d = generate_scenario(ScenarioSpec(2, n), seed)
    spec = ModelSpec("CC").nuisance_spec(2)
    prop, out = spec.fit(d)
    return d, prop, out


def test_search_beats_or_matches_qlearning_seed():
    d, prop, out = _search_setup()
    cfg = SearchConfig(population=30, generations=30, seed=5)
    bl = aipwe_direct_search(d, prop, out, cfg)
    seed_rule_value = bl.diagnostics["seed_rule_aipwe"]
    assert bl.diagnostics["aipwe"] >= seed_rule_value - 1e-12


def test_search_is_deterministic():
    d, prop, out = _search_setup()
    cfg = SearchConfig(population=20, generations=15, seed=9)
    a = aipwe_direct_search(d, prop, out, cfg)
    b = aipwe_direct_search(d, prop, out, cfg)
    assert a.rule.beta0 == b.rule.beta0
    assert np.array_equal(a.rule.beta, b.rule.beta)
    assert a.diagnostics["best_history"] == b.diagnostics["best_history"]


def test_search_history_never_decreases():
    d, prop, out = _search_setup(seed=21)
    bl = aipwe_direct_search(d, prop, out, SearchConfig(population=20, generations=40, seed=3))
    hist = np.array(bl.diagnostics["best_history"])
    assert np.all(np.diff(hist) >= 0.0)


def test_search_matches_threshold_oracle_in_1d():
    rng = np.random.default_rng(30)
    n = 50
    X = rng.normal(size=(n, 1))
    A = np.where(rng.random(n) < 0.5, 1, -1)
    Y = rng.normal(size=n) + A[:] * (X[:, 0] - 0.2)
    d = Dataset(X, A, Y)
    prop = PropensityModel(FeatureMap.intercept_only(1), np.array([0.0]))
    out = fit_outcome(d, FeatureMap.linear(1).with_treatment())

    # oracle: every threshold rule in both orientations
    xs = np.sort(X[:, 0])
    cuts = np.concatenate([[xs[0] - 1.0], (xs[:-1] + xs[1:]) / 2, [xs[-1] + 1.0]])
    best = -np.inf
    for c in cuts:
        for sign in (1.0, -1.0):
            rule = LinearRule.raw(-sign * c, [sign], p=1)
            best = max(best, value_aipwe(d, rule, prop, out).estimate)

    bl = aipwe_direct_search(d, prop, out, SearchConfig(population=50, generations=120, seed=2))
    assert bl.diagnostics["aipwe"] >= best - 1e-6


def test_search_config_validation():
    with pytest.raises(ConfigError):
        SearchConfig(population=5)
    with pytest.raises(ConfigError):
        SearchConfig(generations=0)
