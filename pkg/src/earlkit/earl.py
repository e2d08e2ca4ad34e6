"""Regularized weighted surrogate-risk minimization with cross-fitting.

The estimator minimizes

    P_n[ |W_1| phi{sgn(W_1) f(X)} + |W_-1| phi{-sgn(W_-1) f(X)} ] + lam ||beta||^2

over linear rules f(x) = beta0 + beta' features(x); the intercept is not
penalized. Smooth losses are solved by damped Newton iterations with
backtracking; the hinge loss by projected averaged subgradient descent
warm-started from the squared-hinge minimizer. Cross-fitting partitions
the sample into K folds, fits the nuisance models on fold I_k, runs the
weighted minimization on the complement, and averages the K coefficient
vectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    ConfigError,
    DataError,
    Dataset,
    FeatureMap,
    LinearRule,
    NumericalError,
    sgn,
    stream,
)
from .losses import SurrogateLoss, get_loss, phi_eval, phi_grad, phi_hess
from .nuisance import NuisanceSpec, OutcomeModel, PropensityModel
from .value import value_aipwe
from .weights import WeightPair, dr_weights

__all__ = [
    "DEFAULT_LAMBDA_GRID",
    "EarlConfig",
    "EarlFit",
    "FoldArtifact",
    "LambdaSelection",
    "earl_objective",
    "earl_fit",
    "earl_fit_crossfit",
    "select_lambda",
    "fit_earl_pipeline",
]

DEFAULT_LAMBDA_GRID = tuple(2.0 ** k for k in range(-5, 6))

_HINGE_ITER_CAP = 20000
_ARMIJO = 1e-4


@dataclass(frozen=True)
class EarlConfig:
    """Estimator configuration.

    lam is the ridge weight on the rule coefficients (the JSON/CLI key is
    "lambda"); feature_map is the map for f over x only, without an
    intercept term (None means the raw covariates); k_folds is the number
    of cross-fitting folds K.
    """

    loss: str = "logistic"
    lam: float = 0.0
    feature_map: FeatureMap | None = None
    tol: float = 1e-8
    max_iter: int = 5000
    k_folds: int = 2
    cv_folds: int = 10
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    seed: int = 0

    def __post_init__(self):
        get_loss(self.loss)
        if self.lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if self.k_folds < 2:
            raise ConfigError(f"k_folds must be at least 2, got {self.k_folds}")
        if self.cv_folds < 2:
            raise ConfigError(f"cv_folds must be at least 2, got {self.cv_folds}")
        if len(self.lambda_grid) == 0:
            raise ConfigError("lambda_grid must be nonempty")
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))

    def rule_map(self, p: int) -> FeatureMap:
        return self.feature_map if self.feature_map is not None else FeatureMap.linear(p, intercept=False)


@dataclass(frozen=True)
class FoldArtifact:
    """Everything fit on one cross-fitting fold."""

    nuisance_index: np.ndarray  # I_k, used to fit the nuisance models
    erm_index: np.ndarray  # complement, used for the weighted minimization
    rule: LinearRule
    propensity: PropensityModel
    outcome: OutcomeModel | None
    objective_value: float


@dataclass(frozen=True)
class EarlFit:
    rule: LinearRule
    objective_value: float
    lambda_used: float
    n_iter: int
    grad_norm: float
    converged: bool
    per_fold_rules: tuple[LinearRule, ...] | None = None
    fold_artifacts: tuple[FoldArtifact, ...] | None = None


def _as_weight_arrays(weights, n: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(weights, tuple) and len(weights) == 2 and not isinstance(weights[0], WeightPair):
        w_pos = np.asarray(weights[0], dtype=float).reshape(-1)
        w_neg = np.asarray(weights[1], dtype=float).reshape(-1)
    else:
        w_pos = np.array([wp.w_pos for wp in weights], dtype=float)
        w_neg = np.array([wp.w_neg for wp in weights], dtype=float)
    if w_pos.shape[0] != n or w_neg.shape[0] != n:
        raise DataError(f"weights must align with the {n} data rows")
    if not (np.all(np.isfinite(w_pos)) and np.all(np.isfinite(w_neg))):
        raise DataError("weights must be finite")
    return w_pos, w_neg


class _Problem:
    """Precomputed pieces of the weighted surrogate objective in b = (beta0, beta)."""

    def __init__(self, Z: np.ndarray, w_pos: np.ndarray, w_neg: np.ndarray, loss: SurrogateLoss, lam: float):
        self.Z = Z
        self.n = Z.shape[0]
        self.q = Z.shape[1]
        self.aw = np.abs(w_pos)
        self.bw = np.abs(w_neg)
        self.u = np.asarray(sgn(w_pos), dtype=float)
        self.v = -np.asarray(sgn(w_neg), dtype=float)
        self.loss = loss
        self.lam = float(lam)

    def with_loss(self, loss: SurrogateLoss) -> "_Problem":
        out = _Problem.__new__(_Problem)
        out.__dict__.update(self.__dict__)
        out.loss = loss
        return out

    def _empirical(self, s: np.ndarray) -> float:
        return float(
            np.mean(
                self.aw * phi_eval(self.loss, self.u * s)
                + self.bw * phi_eval(self.loss, self.v * s)
            )
        )

    def objective(self, b: np.ndarray) -> float:
        s = self.Z @ b
        return self._empirical(s) + self.lam * float(b[1:] @ b[1:])

    def gradient(self, b: np.ndarray) -> np.ndarray:
        s = self.Z @ b
        r = (
            self.aw * phi_grad(self.loss, self.u * s) * self.u
            + self.bw * phi_grad(self.loss, self.v * s) * self.v
        ) / self.n
        g = self.Z.T @ r
        g[1:] += 2.0 * self.lam * b[1:]
        return g

    def hessian(self, b: np.ndarray) -> np.ndarray:
        s = self.Z @ b
        w = (
            self.aw * phi_hess(self.loss, self.u * s)
            + self.bw * phi_hess(self.loss, self.v * s)
        ) / self.n
        H = self.Z.T @ (w[:, None] * self.Z)
        idx = np.arange(1, self.q)
        H[idx, idx] += 2.0 * self.lam
        return H


def _rule_design(X: np.ndarray, fm: FeatureMap) -> np.ndarray:
    Phi = fm.design(X)
    return np.column_stack([np.ones(Phi.shape[0]), Phi])


def _build_problem(data: Dataset, weights, config: EarlConfig, lam=None) -> tuple[_Problem, FeatureMap]:
    fm = config.rule_map(data.p)
    if fm.uses_treatment or fm.has_intercept:
        raise ConfigError("the rule feature map must be over x only, without an intercept")
    w_pos, w_neg = _as_weight_arrays(weights, data.n)
    Z = _rule_design(data.X, fm)
    return _Problem(Z, w_pos, w_neg, get_loss(config.loss), config.lam if lam is None else lam), fm


def earl_objective(rule: LinearRule, weights, data: Dataset, loss, lam: float) -> float:
    """The penalized weighted surrogate risk of a rule on a dataset.

    weights may be a sequence of WeightPair or a (W_1, W_-1) array pair
    aligned with the data rows. The intercept is excluded from the penalty.
    """
    w_pos, w_neg = _as_weight_arrays(weights, data.n)
    Z = _rule_design(data.X, rule.feature_map)
    prob = _Problem(Z, w_pos, w_neg, get_loss(loss), float(lam))
    b = np.concatenate([[rule.beta0], rule.beta])
    return prob.objective(b)


def _descent_direction(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    q = H.shape[0]
    scale = max(float(np.max(np.abs(H))), 1e-30)
    for damp in (0.0, 1e-12, 1e-8, 1e-4, 1.0):
        try:
            d = np.linalg.solve(H + damp * scale * np.eye(q), -g)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(d)) and float(g @ d) < 0.0:
            return d
    return -g


def _solve_smooth(prob: _Problem, tol: float, max_iter: int):
    b = np.zeros(prob.q)
    f = prob.objective(b)
    if not np.isfinite(f):
        raise NumericalError("objective is non-finite at the zero coefficient vector")
    best_f, best_b = f, b.copy()
    converged = False
    grad_norm = np.inf
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        g = prob.gradient(b)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at iteration {it}")
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm < tol:
            converged = True
            break
        delta = _descent_direction(prob.hessian(b), g)
        gd = float(g @ delta)
        t = 1.0
        fn = np.inf
        # Armijo with an absolute-noise allowance so steps near machine
        # precision are not rejected spuriously
        while t >= 1e-14:
            fn = prob.objective(b + t * delta)
            if np.isfinite(fn) and fn <= f + _ARMIJO * t * gd + 1e-14 * (1.0 + abs(f)):
                break
            t *= 0.5
        if t < 1e-14 or not np.isfinite(fn):
            break
        b = b + t * delta
        if fn < best_f:
            best_f, best_b = fn, b.copy()
        if fn >= f - 1e-14 * (1.0 + abs(f)):
            stall += 1
            if stall >= 10:
                break
        else:
            stall = 0
        f = fn
    if converged:
        out_b, out_f = b, f
    else:
        out_b, out_f = best_b, best_f
    grad_norm = float(np.max(np.abs(prob.gradient(out_b))))
    return out_b, out_f, it, grad_norm, converged or grad_norm < tol


def _polish_scale(prob: _Problem, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Golden-section search over s >= 0 of the convex map s -> obj(s b)."""
    if not np.any(b):
        return b, prob.objective(b)
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 0.0, 2.0
    x1 = hi - inv * (hi - lo)
    x2 = lo + inv * (hi - lo)
    f1 = prob.objective(x1 * b)
    f2 = prob.objective(x2 * b)
    for _ in range(80):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv * (hi - lo)
            f1 = prob.objective(x1 * b)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv * (hi - lo)
            f2 = prob.objective(x2 * b)
    s = x1 if f1 <= f2 else x2
    sb = s * b
    return sb, prob.objective(sb)


def _solve_hinge(prob: _Problem, config: EarlConfig):
    zero = np.zeros(prob.q)
    f0 = prob.objective(zero)
    if not np.isfinite(f0):
        raise NumericalError("objective is non-finite at the zero coefficient vector")
    # warm start from the squared-hinge minimizer of the same weighted problem
    warm_b, *_ = _solve_smooth(prob.with_loss(get_loss("sqhinge")), tol=1e-6, max_iter=200)
    fw = prob.objective(warm_b)
    if fw <= f0:
        b, fb = warm_b.copy(), fw
    else:
        b, fb = zero.copy(), f0
    best_f, best_b = fb, b.copy()
    r_beta = np.sqrt(f0 / prob.lam) if prob.lam > 0 else 1e8
    c = 0.1 * (1.0 + float(np.linalg.norm(b)))
    avg = b.copy()
    max_iter = min(4 * config.max_iter, _HINGE_ITER_CAP)
    it = 0
    for it in range(1, max_iter + 1):
        g = prob.gradient(b)
        gn = float(np.linalg.norm(g))
        if gn < 1e-15:
            break  # exact stationary point of the chosen subgradient
        b = b - (c / (np.sqrt(it) * gn)) * g
        nb = float(np.linalg.norm(b[1:]))
        if nb > r_beta:
            b[1:] *= r_beta / nb
        avg += (b - avg) / it
        f = prob.objective(b)
        if not np.isfinite(f):
            raise NumericalError(f"non-finite objective at subgradient iteration {it}")
        if f < best_f:
            best_f, best_b = f, b.copy()
    out_b, out_f = best_b, best_f
    for cand in (best_b, avg):
        pb, pf = _polish_scale(prob, cand)
        if pf < out_f:
            out_b, out_f = pb, pf
    if f0 < out_f:
        out_b, out_f = zero, f0
    grad_norm = float(np.max(np.abs(prob.gradient(out_b))))
    return out_b, out_f, it, grad_norm, True


def earl_fit(data: Dataset, weights, config: EarlConfig) -> EarlFit:
    """Minimize the penalized weighted surrogate risk on one sample.

    Smooth losses run damped Newton iterations until the sup-norm of the
    gradient drops below config.tol or config.max_iter is reached; the
    hinge loss runs projected averaged subgradient descent and returns the
    best iterate after a one-dimensional scale polish. The returned
    objective never exceeds the objective at beta = 0.
    """
    prob, fm = _build_problem(data, weights, config)
    loss = get_loss(config.loss)
    if loss.smooth:
        b, f, it, gn, ok = _solve_smooth(prob, config.tol, config.max_iter)
    else:
        b, f, it, gn, ok = _solve_hinge(prob, config)
    rule = LinearRule(b[0], b[1:], fm)
    return EarlFit(
        rule=rule,
        objective_value=f,
        lambda_used=config.lam,
        n_iter=it,
        grad_norm=gn,
        converged=ok,
    )


def _partition(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = stream(seed, 7011).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def _merge_single_arm_folds(data: Dataset, folds: list[np.ndarray]) -> list[np.ndarray]:
    folds = [np.asarray(f) for f in folds]
    while True:
        bad = next(
            (i for i, f in enumerate(folds) if len(np.unique(data.A[f])) < 2),
            None,
        )
        if bad is None:
            return folds
        if len(folds) <= 2:
            raise DataError(
                "a fold contains a single treatment arm and K=2 leaves no fold to merge with"
            )
        neighbor = (bad + 1) % len(folds)
        warnings.warn(
            f"fold {bad} contains a single treatment arm; merging it with fold {neighbor}",
            stacklevel=3,
        )
        merged = np.sort(np.concatenate([folds[bad], folds[neighbor]]))
        folds = [f for i, f in enumerate(folds) if i not in (bad, neighbor)] + [merged]


def earl_fit_crossfit(
    data: Dataset,
    nuisance: NuisanceSpec,
    config: EarlConfig,
    folds=None,
) -> EarlFit:
    """K-fold sample-splitting estimator.

    For each fold k, the nuisance models are fit on I_k and the weighted
    minimization runs on the complement; the aggregated rule averages the
    per-fold coefficient vectors. A fold holding a single treatment arm is
    merged into its neighbor (with a warning) when K > 2, and is an error
    when K = 2. An explicit list of index arrays may be supplied in place
    of the seeded partition.
    """
    k = config.k_folds if folds is None else len(folds)
    if data.n < 2 * k:
        raise DataError(f"need n >= 2K rows for cross-fitting, got n={data.n}, K={k}")
    if folds is None:
        folds = _partition(data.n, k, config.seed)
    folds = _merge_single_arm_folds(data, list(folds))
    artifacts = []
    all_idx = np.arange(data.n)
    for fold_idx in folds:
        erm_idx = np.setdiff1d(all_idx, fold_idx)
        prop, out = nuisance.fit(data.subset(fold_idx))
        erm_data = data.subset(erm_idx)
        w = dr_weights(erm_data, prop, out)
        fit_k = earl_fit(erm_data, w, config)
        artifacts.append(
            FoldArtifact(
                nuisance_index=fold_idx,
                erm_index=erm_idx,
                rule=fit_k.rule,
                propensity=prop,
                outcome=out,
                objective_value=fit_k.objective_value,
            )
        )
    rules = [a.rule for a in artifacts]
    beta0 = float(np.mean([r.beta0 for r in rules]))
    beta = np.mean(np.stack([r.beta for r in rules]), axis=0)
    agg = LinearRule(beta0, beta, rules[0].feature_map)
    return EarlFit(
        rule=agg,
        # cross-fit convention: average of the per-fold objectives; each
        # per-fold objective is recomputable from its FoldArtifact
        objective_value=float(np.mean([a.objective_value for a in artifacts])),
        lambda_used=config.lam,
        n_iter=0,
        grad_norm=float("nan"),
        converged=True,
        per_fold_rules=tuple(rules),
        fold_artifacts=tuple(artifacts),
    )


@dataclass(frozen=True)
class LambdaSelection:
    lambda_: float
    table: tuple[dict, ...]


def select_lambda(
    data: Dataset,
    nuisance: NuisanceSpec,
    config: EarlConfig,
    crossfit: bool = False,
) -> LambdaSelection:
    """Choose lambda by cross-validated held-out value.

    For each lambda in the grid and each of config.cv_folds splits, the
    estimator is fit on the training folds and the resulting rule is scored
    on the held-out fold with the doubly robust value estimator, using
    nuisance models refit on the held-out fold. Ties break toward the
    larger lambda. Folds whose fits fail contribute NaN and are ignored;
    if every value is non-finite the selection fails.
    """
    grid = np.sort(np.asarray(config.lambda_grid, dtype=float))
    if data.n < config.cv_folds:
        raise DataError(f"need n >= cv_folds, got n={data.n}, cv_folds={config.cv_folds}")
    perm = stream(config.seed, 4242).permutation(data.n)
    folds = [np.sort(f) for f in np.array_split(perm, config.cv_folds)]
    all_idx = np.arange(data.n)
    vals = np.full((len(grid), len(folds)), np.nan)
    for j, hold in enumerate(folds):
        train_idx = np.setdiff1d(all_idx, hold)
        train = data.subset(train_idx)
        held = data.subset(hold)
        try:
            prop_h, out_h = nuisance.fit(held)
            if not crossfit:
                prop_t, out_t = nuisance.fit(train)
                w_t = dr_weights(train, prop_t, out_t)
        except Exception:
            continue
        for i, lam in enumerate(grid):
            cfg = replace(config, lam=float(lam))
            try:
                if crossfit:
                    fit = earl_fit_crossfit(train, nuisance, cfg)
                else:
                    fit = earl_fit(train, w_t, cfg)
                vals[i, j] = value_aipwe(held, fit.rule, prop_h, out_h).estimate
            except Exception:
                continue
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        means = np.nanmean(vals, axis=1)
    if not np.any(np.isfinite(means)):
        raise NumericalError("every cross-validated value was non-finite")
    best_lam, best_val = None, -np.inf
    for lam, m in zip(grid, means):
        if np.isfinite(m) and m >= best_val:
            best_lam, best_val = float(lam), float(m)
    table = tuple(
        {
            "lambda": float(lam),
            "mean_value": (float(m) if np.isfinite(m) else None),
            "fold_values": [float(v) if np.isfinite(v) else None for v in row],
        }
        for lam, m, row in zip(grid, means, vals)
    )
    return LambdaSelection(lambda_=best_lam, table=table)


@dataclass(frozen=True)
class PipelineResult:
    fit: EarlFit
    selection: LambdaSelection | None
    propensity: PropensityModel
    outcome: OutcomeModel | None


def fit_earl_pipeline(
    data: Dataset,
    nuisance: NuisanceSpec,
    config: EarlConfig,
    select: str = "fixed",
    crossfit: bool = False,
) -> PipelineResult:
    """Full pipeline: optional lambda selection, nuisance fits, final rule.

    select is "fixed" (use config.lam) or "cv"; crossfit switches the final
    fit (and the inner CV fits) to the K-fold sample-splitting estimator.
    """
    if select not in ("fixed", "cv"):
        raise ConfigError(f"select must be 'fixed' or 'cv', got {select!r}")
    selection = None
    cfg = config
    if select == "cv":
        selection = select_lambda(data, nuisance, config, crossfit=crossfit)
        cfg = replace(config, lam=selection.lambda_)
    prop, out = nuisance.fit(data)
    if crossfit:
        fit = earl_fit_crossfit(data, nuisance, cfg)
    else:
        fit = earl_fit(data, dr_weights(data, prop, out), cfg)
    return PipelineResult(fit=fit, selection=selection, propensity=prop, outcome=out)
