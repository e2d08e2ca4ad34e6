"""Benchmark harness: generative scenarios, nuisance-specification grid,
replicate runner, and the Monte Carlo oracle for true rule values.

Three generative models share the outcome

    Y = sum_j X_j^2 + sum_j X_j + A c(X) + eps,   c(x) = x1 + x2 - 0.1,

with X ~ N(0, I_10) and eps ~ N(0, 1). They differ in the treatment
mechanism: scenario 1 uses the logit link x1 + x2 + x1 x2, scenario 2 uses
0.5 x1 - 0.5, and scenario 3 assigns treatment with constant probability
0.025 (a severe positivity violation). The specification grid crosses
correct/incorrect propensity and outcome models (CC, CI, IC, II).
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logit

from .baselines import SearchConfig, aipwe_direct_search, owl_fit, qlearning_fit
from .core import ConfigError, Dataset, EarlError, FeatureMap, LinearRule, stream
from .earl import EarlConfig, earl_fit, select_lambda
from .nuisance import NuisanceSpec, OutcomeModel, PropensityModel, fit_propensity
from .weights import dr_weights

__all__ = [
    "ScenarioSpec",
    "ModelSpec",
    "ExperimentResult",
    "generate_scenario",
    "true_value_mc",
    "optimal_rule",
    "true_propensity_model",
    "true_outcome_model",
    "run_experiment",
    "write_results_csv",
    "METHODS",
]

SCENARIO_3_PROPENSITY = 0.025
DEFAULT_P = 10
DEFAULT_LAMBDA = 2.0**-5


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int
    n: int
    p: int = DEFAULT_P
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.scenario not in (1, 2, 3):
            raise ConfigError(f"scenario must be 1, 2, or 3, got {self.scenario}")
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}")
        if self.p < 2:
            raise ConfigError(f"need p >= 2 for the contrast x1 + x2 - 0.1, got {self.p}")


def contrast(X: np.ndarray) -> np.ndarray:
    """Treatment-interaction contrast c(x) = x1 + x2 - 0.1."""
    return X[:, 0] + X[:, 1] - 0.1


def propensity_true(scenario: int, X: np.ndarray) -> np.ndarray:
    """P(A = 1 | X) under each scenario."""
    if scenario == 1:
        return expit(X[:, 0] + X[:, 1] + X[:, 0] * X[:, 1])
    if scenario == 2:
        return expit(0.5 * X[:, 0] - 0.5)
    return np.full(X.shape[0], SCENARIO_3_PROPENSITY)


def outcome_mean(X: np.ndarray, A: np.ndarray) -> np.ndarray:
    return np.sum(X**2, axis=1) + np.sum(X, axis=1) + np.asarray(A, dtype=float) * contrast(X)


def generate_scenario(spec: ScenarioSpec, seed) -> Dataset:
    """Draw one training set; deterministic given the seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = rng.standard_normal((spec.n, spec.p))
    A = np.where(rng.random(spec.n) < propensity_true(spec.scenario, X), 1, -1)
    Y = outcome_mean(X, A) + spec.noise_sd * rng.standard_normal(spec.n)
    return Dataset(X, A, Y)


def true_value_mc(rule, scenario: int, draws: int, seed, p: int = DEFAULT_P) -> float:
    """Monte Carlo estimate of the true value of a rule on fresh draws.

    The mean-zero noise is omitted since it averages out. rule may be a
    LinearRule or any callable mapping an n x p matrix to signs.
    """
    if scenario not in (1, 2, 3):
        raise ConfigError(f"scenario must be 1, 2, or 3, got {scenario}")
    if draws < 1:
        raise ConfigError(f"draws must be positive, got {draws}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = rng.standard_normal((draws, p))
    return _value_on(X, rule)


def _value_on(X: np.ndarray, rule) -> float:
    if isinstance(rule, LinearRule):
        d = rule.decide_many(X)
    else:
        d = np.asarray(rule(X))
    return float(np.mean(outcome_mean(X, d)))


def optimal_rule(p: int = DEFAULT_P) -> LinearRule:
    """sgn{c(x)}, the value-maximizing rule."""
    beta = np.zeros(p)
    beta[0] = beta[1] = 1.0
    return LinearRule.raw(-0.1, beta, p)


def true_propensity_model(scenario: int, p: int = DEFAULT_P, clip=(0.01, 0.99)) -> PropensityModel:
    """The data-generating propensity wrapped as a fitted-model object."""
    if scenario == 1:
        fm = FeatureMap(p, (("1",), ("x", 0), ("x", 1), ("xx", 0, 1)))
        gamma = np.array([0.0, 1.0, 1.0, 1.0])
    elif scenario == 2:
        fm = FeatureMap(p, (("1",), ("x", 0)))
        gamma = np.array([-0.5, 0.5])
    else:
        fm = FeatureMap.intercept_only(p)
        gamma = np.array([float(logit(SCENARIO_3_PROPENSITY))])
    return PropensityModel(feature_map=fm, gamma=gamma, clip=clip)


def true_outcome_model(p: int = DEFAULT_P) -> OutcomeModel:
    """The data-generating conditional mean wrapped as a fitted-model object."""
    fm = _outcome_map(correct=True, p=p)
    theta = np.zeros(fm.q)
    for i, term in enumerate(fm.terms):
        if term[0] in ("x", "x2"):
            theta[i] = 1.0
        elif term == ("a",):
            theta[i] = -0.1
        elif term[0] == "ax":
            theta[i] = 1.0
    return OutcomeModel(feature_map=fm, theta=theta)


def _propensity_map(correct: bool, scenario: int, p: int) -> FeatureMap:
    if correct:
        if scenario == 1:
            return FeatureMap(p, (("1",), ("x", 0), ("x", 1), ("xx", 0, 1)))
        return FeatureMap(p, (("1",), ("x", 0)))
    if scenario == 1:
        return FeatureMap.linear(p, intercept=True)
    return FeatureMap.intercept_only(p)


def _outcome_map(correct: bool, p: int) -> FeatureMap:
    if correct:
        return FeatureMap.quadratic(p, intercept=True).with_treatment(coords=(0, 1))
    return FeatureMap.linear(p, intercept=True).with_treatment()


@dataclass(frozen=True)
class ModelSpec:
    """One cell of the CC/CI/IC/II specification grid."""

    code: str

    def __post_init__(self):
        if self.code not in ("CC", "CI", "IC", "II"):
            raise ConfigError(f"spec code must be CC, CI, IC, or II, got {self.code!r}")

    @property
    def propensity_correct(self) -> bool:
        return self.code[0] == "C"

    @property
    def outcome_correct(self) -> bool:
        return self.code[1] == "C"

    def nuisance_spec(
        self, scenario: int, p: int = DEFAULT_P, ridge: float = 0.0, clip=(0.01, 0.99)
    ) -> NuisanceSpec:
        return NuisanceSpec(
            propensity_map=_propensity_map(self.propensity_correct, scenario, p),
            outcome_map=_outcome_map(self.outcome_correct, p),
            ridge=ridge,
            clip=clip,
        )


@dataclass(frozen=True)
class ExperimentResult:
    method: str
    scenario: int
    spec: str
    n: int
    replicate: int
    value: float
    seconds: float
    error: str | None = None


METHODS = (
    "earl-logistic",
    "earl-hinge",
    "earl-exp",
    "earl-sqhinge",
    "qlearning",
    "owl",
    "aipwe",
)


def _fit_method_rule(
    method: str,
    data: Dataset,
    nspec: NuisanceSpec,
    fit_seed: int,
    earl_cfg: EarlConfig,
    search_cfg: SearchConfig,
    select: str,
) -> LinearRule:
    if method.startswith("earl-"):
        cfg = replace(earl_cfg, loss=method.split("-", 1)[1], seed=fit_seed)
        if select == "cv":
            sel = select_lambda(data, nspec, cfg)
            cfg = replace(cfg, lam=sel.lambda_)
        prop, out = nspec.fit(data)
        return earl_fit(data, dr_weights(data, prop, out), cfg).rule
    if method == "qlearning":
        return qlearning_fit(data, nspec.outcome_map).rule
    if method == "owl":
        # hinge loss, null Q-model; lambda stays fixed (a CV grid of
        # subgradient solves would dominate the harness runtime)
        prop = fit_propensity(data, nspec.propensity_map, ridge=nspec.ridge, clip=nspec.clip)
        cfg = replace(earl_cfg, loss="hinge", seed=fit_seed)
        return owl_fit(data, prop, cfg).rule
    if method == "aipwe":
        prop, out = nspec.fit(data)
        return aipwe_direct_search(
            data, prop, out, replace(search_cfg, seed=fit_seed)
        ).rule
    raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def run_experiment(
    scenarios,
    specs,
    methods,
    n_grid,
    replicates: int,
    seed: int = 0,
    validation_draws: int = 10000,
    threads: int = 1,
    earl_config: EarlConfig | None = None,
    search_config: SearchConfig | None = None,
    select: str = "cv",
    p: int = DEFAULT_P,
) -> list[ExperimentResult]:
    """Run the full benchmark grid and return one record per cell.

    All methods and specifications within a (scenario, n, replicate) cell
    share the same training draw, and each scenario shares one validation
    sample, mirroring a single stored validation set. Replicates run on
    independent derived RNG streams, so results are identical for any
    thread count. A failing fit yields a record with a NaN value and the
    error message; the run continues.
    """
    scenarios = [int(s) for s in scenarios]
    spec_list = [ModelSpec(str(c)) for c in specs]
    methods = [str(m) for m in methods]
    n_grid = [int(n) for n in n_grid]
    if not (scenarios and spec_list and methods and n_grid and replicates >= 1):
        raise ConfigError("scenarios, specs, methods, n_grid, and replicates must be nonempty")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    earl_cfg = earl_config if earl_config is not None else EarlConfig(lam=DEFAULT_LAMBDA)
    search_cfg = search_config if search_config is not None else SearchConfig()
    validation = {
        s: stream(seed, 202, s).standard_normal((validation_draws, p)) for s in scenarios
    }

    def one_cell(scenario: int, n: int, rep: int) -> list[ExperimentResult]:
        data = generate_scenario(ScenarioSpec(scenario, n, p=p), stream(seed, 101, scenario, n, rep))
        records = []
        for method in methods:
            for mspec in spec_list:
                t0 = time.perf_counter()
                err = None
                value = float("nan")
                fit_seed = int(
                    stream(seed, 303, scenario, n, rep, method, mspec.code).integers(2**63)
                )
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        rule = _fit_method_rule(
                            method,
                            data,
                            mspec.nuisance_spec(scenario, p=p),
                            fit_seed,
                            earl_cfg,
                            search_cfg,
                            select,
                        )
                    value = _value_on(validation[scenario], rule)
                except (EarlError, np.linalg.LinAlgError) as exc:
                    err = str(exc)
                records.append(
                    ExperimentResult(
                        method=method,
                        scenario=scenario,
                        spec=mspec.code,
                        n=n,
                        replicate=rep,
                        value=value,
                        seconds=time.perf_counter() - t0,
                        error=err,
                    )
                )
        return records

    cells = [(s, n, r) for s in scenarios for n in n_grid for r in range(replicates)]
    results: list[ExperimentResult] = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for recs in pool.map(lambda c: one_cell(*c), cells):
                results.extend(recs)
    else:
        for cell in cells:
            results.extend(one_cell(*cell))
    results.sort(key=lambda r: (r.method, r.scenario, r.spec, r.n, r.replicate))
    return results


def write_results_csv(results, fh, timings: bool = True) -> None:
    """Emit the experiment table as method,scenario,spec,n,replicate,value,seconds.

    With timings off the seconds column is written as zero so that
    repeated runs with the same seed produce identical bytes.
    """
    fh.write("method,scenario,spec,n,replicate,value,seconds\n")
    for r in results:
        secs = r.seconds if timings else 0.0
        fh.write(
            f"{r.method},{r.scenario},{r.spec},{r.n},{r.replicate},{r.value!r},{secs:.6f}\n"
        )
