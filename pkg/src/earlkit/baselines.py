"""Comparator estimators: Q-learning, outcome weighted learning, and a
direct maximizer of the augmented IPW value over linear rules.

Q-learning fits the outcome model and recommends the arm with the larger
fitted Q; for maps linear in treatment the contrast Q(x,1) - Q(x,-1) is
itself linear in x, so the rule is returned in closed form. OWL is the
special case of the weighted surrogate minimizer with a null Q-model (the
outcome is shifted to be nonnegative first). The direct search runs a
small evolutionary loop over unit-norm coefficient vectors with a free
intercept, seeded with the Q-learning rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, Dataset, FeatureMap, LinearRule, stream
from .earl import EarlConfig, earl_fit
from .nuisance import OutcomeModel, PropensityModel, fit_outcome
from .value import value_aipwe
from .weights import dr_weights

__all__ = [
    "BaselineFit",
    "SearchConfig",
    "qlearning_fit",
    "owl_fit",
    "aipwe_direct_search",
    "contrast_rule",
]

# effectively a constant rule when the coefficient vector is forced to unit norm
_CONST_INTERCEPT = 1e9


@dataclass(frozen=True)
class BaselineFit:
    method: str
    rule: LinearRule
    diagnostics: dict


def contrast_rule(model: OutcomeModel) -> LinearRule:
    """Rule sgn{Q(x,1) - Q(x,-1)} for an outcome map linear in treatment.

    Treatment-free terms cancel in the contrast; the main effect
    contributes 2*theta to the intercept and each a*x_j term contributes
    2*theta x_j.
    """
    p = model.feature_map.p
    beta0 = 0.0
    coords, coefs = [], []
    for term, th in zip(model.feature_map.terms, model.theta):
        if term == ("a",):
            beta0 += 2.0 * float(th)
        elif term[0] == "ax":
            coords.append(term[1])
            coefs.append(2.0 * float(th))
    fm = FeatureMap(p, tuple(("x", j) for j in coords))
    return LinearRule(beta0, np.asarray(coefs, dtype=float), fm)


def qlearning_fit(data: Dataset, outcome_map: FeatureMap) -> BaselineFit:
    """Least-squares Q-learning: d(x) = sgn{Q(x,1) - Q(x,-1)}, ties to +1."""
    model = fit_outcome(data, outcome_map)
    return BaselineFit(
        method="qlearning",
        rule=contrast_rule(model),
        diagnostics={"outcome_model": model},
    )


def owl_fit(data: Dataset, propensity: PropensityModel, config: EarlConfig) -> BaselineFit:
    """Outcome weighted learning: null Q-model, propensity-only weights.

    Outcomes are shifted by min(0, min Y) so the weights are nonnegative;
    the shift is recorded in the diagnostics. The objective is identical
    to the general weighted surrogate objective under a null Q-model.
    """
    shift = min(0.0, float(np.min(data.Y)))
    work = data if shift == 0.0 else Dataset(data.X, data.A, data.Y - shift)
    w = dr_weights(work, propensity, None)
    fit = earl_fit(work, w, config)
    return BaselineFit(
        method="owl",
        rule=fit.rule,
        diagnostics={
            "outcome_shift": shift,
            "objective_value": fit.objective_value,
            "lambda_used": fit.lambda_used,
            "converged": fit.converged,
        },
    )


@dataclass(frozen=True)
class SearchConfig:
    population: int = 100
    generations: int = 200
    mutation_sd: float = 0.1
    tournament: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.population < 10:
            raise ConfigError(f"population must be at least 10, got {self.population}")
        if self.generations < 1:
            raise ConfigError(f"generations must be at least 1, got {self.generations}")


def _normalize_genome(genome: np.ndarray, fallback_axis: int) -> np.ndarray:
    out = genome.copy()
    nb = float(np.linalg.norm(out[1:]))
    if nb < 1e-12:
        out[1:] = 0.0
        out[1 + fallback_axis] = 1.0
    else:
        out[1:] /= nb
    return out


def _seed_genome(outcome: OutcomeModel, p: int, rng: np.random.Generator) -> np.ndarray:
    rule = contrast_rule(outcome)
    beta = np.zeros(p)
    for term, b in zip(rule.feature_map.terms, rule.beta):
        beta[term[1]] = b
    nb = float(np.linalg.norm(beta))
    if nb < 1e-12:
        # constant rule: a huge intercept over any unit direction preserves the sign
        direction = rng.standard_normal(p)
        direction /= max(float(np.linalg.norm(direction)), 1e-12)
        b0 = _CONST_INTERCEPT if rule.beta0 >= 0 else -_CONST_INTERCEPT
        return np.concatenate([[b0], direction])
    return np.concatenate([[rule.beta0 / nb], beta / nb])


def aipwe_direct_search(
    data: Dataset,
    propensity: PropensityModel,
    outcome: OutcomeModel | None,
    config: SearchConfig = SearchConfig(),
) -> BaselineFit:
    """Evolutionary maximization of the augmented IPW value over rules
    f(x) = b0 + beta'x with ||beta|| = 1.

    Tournament selection, uniform crossover, Gaussian mutation, and an
    elite copied unchanged each generation, so the best value never
    decreases. Deterministic given the seed. The Q-learning rule derived
    from the supplied outcome model is placed in the initial population
    (a random direction when no outcome model is given).
    """
    rng = stream(config.seed, 5150)
    n, p = data.n, data.p
    pi_pos = propensity.prob(data.X, 1)
    pi_neg = propensity.prob(data.X, -1)
    if outcome is None:
        q_pos = np.zeros(n)
        q_neg = np.zeros(n)
    else:
        q_pos = outcome.predict_arm(data.X, 1)
        q_neg = outcome.predict_arm(data.X, -1)
    Y, A, X = data.Y, data.A.astype(float), data.X

    def fitness(pop: np.ndarray) -> np.ndarray:
        # scores for the whole population at once: n x m
        F = X @ pop[:, 1:].T + pop[:, 0]
        D = np.where(F >= 0.0, 1.0, -1.0)
        match = (A[:, None] == D).astype(float)
        pi_d = np.where(D == 1.0, pi_pos[:, None], pi_neg[:, None])
        q_d = np.where(D == 1.0, q_pos[:, None], q_neg[:, None])
        contrib = Y[:, None] * match / pi_d - (match - pi_d) / pi_d * q_d
        return contrib.mean(axis=0)

    m = config.population
    pop = np.empty((m, p + 1))
    if outcome is not None:
        pop[0] = _seed_genome(outcome, p, rng)
    else:
        pop[0] = _normalize_genome(np.concatenate([[0.0], rng.standard_normal(p)]), 0)
    for i in range(1, m):
        genome = np.concatenate([rng.normal(size=1), rng.standard_normal(p)])
        pop[i] = _normalize_genome(genome, i % p)
    fit_vals = fitness(pop)
    seed_value = float(fit_vals[0])
    best_i = int(np.argmax(fit_vals))
    best_genome = pop[best_i].copy()
    best_value = float(fit_vals[best_i])
    history = [best_value]
    for gen in range(config.generations):
        children = np.empty_like(pop)
        children[0] = best_genome  # elitism
        for i in range(1, m):
            t1 = rng.integers(0, m, size=config.tournament)
            t2 = rng.integers(0, m, size=config.tournament)
            pa = pop[t1[np.argmax(fit_vals[t1])]]
            pb = pop[t2[np.argmax(fit_vals[t2])]]
            mask = rng.random(p + 1) < 0.5
            child = np.where(mask, pa, pb)
            child = child + rng.normal(0.0, config.mutation_sd, size=p + 1)
            children[i] = _normalize_genome(child, i % p)
        pop = children
        fit_vals = fitness(pop)
        gen_best = int(np.argmax(fit_vals))
        if float(fit_vals[gen_best]) > best_value:
            best_value = float(fit_vals[gen_best])
            best_genome = pop[gen_best].copy()
        if best_value < history[-1]:
            raise AssertionError("elitism violated: best value decreased")
        history.append(best_value)
    rule = LinearRule.raw(best_genome[0], best_genome[1:], p)
    return BaselineFit(
        method="aipwe_direct",
        rule=rule,
        diagnostics={
            "aipwe": value_aipwe(data, rule, propensity, outcome).estimate,
            "best_history": tuple(history),
            "seed_rule_aipwe": seed_value,
            "evaluations": m * (config.generations + 1),
        },
    )
