"""Nuisance working models: participation, treatment, and individual outcome.

Participation and outcome probabilities come from logistic regression fit by
maximum likelihood (Newton/IRLS) or by elastic-net-penalized likelihood
(cyclic coordinate descent on the IRLS quadratic approximation). Treatment
probabilities come from known randomization constants, empirical arm shares,
or a multinomial logit fit by gradient ascent.

All fitting is deterministic. ``fit_nuisance`` assembles training rows in
ascending cluster_id order so that refitting a permuted dataset reproduces
bit-identical coefficients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data_model import StudyDataset
from .errors import (
    DimensionMismatch,
    EmptyArm,
    NonConvergence,
    NotStandardized,
    ProbabilitiesDontSumToOne,
    Separation,
    SingularSystem,
)
from .features import (
    FeatureMatrix,
    FeatureSpec,
    Standardization,
    cluster_features,
    individual_features,
    standardize,
)

__all__ = [
    "ProbabilityModel",
    "TreatmentModel",
    "FittedNuisance",
    "ModelConfig",
    "TreatmentConfig",
    "NuisanceConfig",
    "fit_logistic_mle",
    "fit_logistic_elastic_net",
    "predict",
    "fit_treatment_model",
    "treatment_probabilities",
    "fit_nuisance",
    "soft_threshold",
]

logger = logging.getLogger(__name__)

MLE_TOL = 1e-8
MLE_MAX_ITER = 100
MAX_HALVINGS = 10
COEF_CAP = 30.0
EN_OUTER_TOL = 1e-7
EN_MAX_OUTER = 250
MULTINOMIAL_TOL = 1e-8
MULTINOMIAL_MAX_ITER = 20000


@dataclass(frozen=True)
class ProbabilityModel:
    """Fitted logistic predictor: probability = expit(features @ beta)."""

    beta: np.ndarray
    method: str  # "mle" | "elastic_net"
    lam: float = 0.0
    alpha: float = 1.0
    iterations: int = 0
    converged: bool = True
    max_coef_change: float = float("nan")
    stats: Standardization | None = None  # training standardization, if any


def _bernoulli_loglik(eta: np.ndarray, y: np.ndarray, v: np.ndarray) -> float:
    # sum v*(y*eta - log(1+exp(eta))), stable for large |eta|
    return float(np.sum(v * (y * eta - np.logaddexp(0.0, eta))))


def _standardized_scale(values: np.ndarray) -> np.ndarray:
    """Per-column sample SD (1 for the intercept and constant columns)."""
    if values.shape[0] > 1:
        sd = values.std(axis=0, ddof=1)
    else:
        sd = np.zeros(values.shape[1])
    sd = np.where(sd == 0.0, 1.0, sd)
    sd[0] = 1.0
    return sd


def _check_cap(beta: np.ndarray, col_sd: np.ndarray, col_mean: np.ndarray) -> None:
    # coefficient magnitudes on the standardized-feature scale
    scaled = np.abs(beta) * col_sd
    center = abs(float(beta @ col_mean))
    if max(float(scaled[1:].max(initial=0.0)), center) > COEF_CAP:
        raise Separation(
            "coefficient norm exceeded the cap of "
            f"{COEF_CAP:g} on standardized features (likely separation)"
        )


def _check_labels(y: np.ndarray, v: np.ndarray) -> None:
    active = v > 0
    if not (np.any(y[active] > 0) and np.any(y[active] < 1)):
        raise Separation("labels need at least one 0 and one 1 (with positive weight)")


def fit_logistic_mle(
    features: FeatureMatrix,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
) -> ProbabilityModel:
    """Weighted Bernoulli MLE via iteratively reweighted least squares.

    Converged when the largest absolute coefficient change drops below 1e-8;
    stops after 100 iterations otherwise. Raises Separation when labels are
    degenerate or coefficients run off to the likelihood's boundary, and
    SingularSystem for a rank-deficient design.
    """
    X = features.values
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatch(
            f"{y.shape[0]} labels for {X.shape[0]} feature rows"
        )
    v = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if np.any(v < 0):
        raise ValueError("weights must be nonnegative")
    _check_labels(y, v)
    if np.linalg.matrix_rank(X[v > 0]) < X.shape[1]:
        raise SingularSystem(
            "collinear features; remove redundant columns or regularize"
        )
    col_sd = _standardized_scale(X)
    col_mean = X.mean(axis=0)

    beta = np.zeros(X.shape[1])
    eta = X @ beta
    loglik = _bernoulli_loglik(eta, y, v)
    change = float("inf")
    iterations = 0
    for iterations in range(1, MLE_MAX_ITER + 1):
        mu = expit(eta)
        grad = X.T @ (v * (y - mu))
        hess = X.T @ (X * (v * mu * (1.0 - mu))[:, None])
        try:
            delta = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("singular IRLS system") from exc
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = beta + step * delta
            cand_eta = X @ candidate
            cand_loglik = _bernoulli_loglik(cand_eta, y, v)
            if cand_loglik >= loglik - 1e-12:
                break
            step *= 0.5
        else:
            raise NonConvergence(
                f"IRLS step-halving exhausted at iteration {iterations}"
            )
        change = float(np.max(np.abs(step * delta)))
        beta, eta, loglik = candidate, cand_eta, cand_loglik
        _check_cap(beta, col_sd, col_mean)
        if change < MLE_TOL:
            break
    return ProbabilityModel(
        beta=beta,
        method="mle",
        iterations=iterations,
        converged=change < MLE_TOL,
        max_coef_change=change,
        stats=features.stats,
    )


def soft_threshold(z: float, gamma: float) -> float:
    """S(z, gamma) = sign(z) * max(|z| - gamma, 0)."""
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


def fit_logistic_elastic_net(
    features: FeatureMatrix,
    labels: np.ndarray,
    lam: float,
    alpha: float,
) -> ProbabilityModel:
    """Elastic-net-penalized logistic regression, intercept unpenalized.

    Minimizes (1/n)*NLL + lam*(alpha*||b||_1 + (1-alpha)/2*||b||_2^2) over the
    non-intercept coefficients by cyclic coordinate descent on the IRLS
    quadratic approximation. Requires standardized features. lam=0 recovers
    the MLE; alpha=1 is the lasso.
    """
    if lam < 0 or not 0.0 <= alpha <= 1.0:
        raise ValueError("need lam >= 0 and alpha in [0, 1]")
    if features.stats is None:
        raise NotStandardized("elastic net requires standardized features")
    X = features.values
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatch(
            f"{y.shape[0]} labels for {X.shape[0]} feature rows"
        )
    _check_labels(y, np.ones_like(y))
    n, d = X.shape
    col_sd = _standardized_scale(X)
    col_mean = X.mean(axis=0)

    beta = np.zeros(d)
    eta = X @ beta
    change = float("inf")
    outer = 0
    for outer in range(1, EN_MAX_OUTER + 1):
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        z = eta + (y - mu) / w
        resid = z - eta  # z - X @ beta, maintained across coordinate updates
        wx2 = (w[:, None] * X * X).sum(axis=0) / n
        beta_old = beta.copy()
        for _ in range(1000):
            inner_change = 0.0
            for k in range(d):
                xk = X[:, k]
                num = float(np.dot(w * xk, resid) / n) + wx2[k] * beta[k]
                if k == 0:
                    new = num / wx2[0]
                else:
                    new = soft_threshold(num, lam * alpha) / (
                        wx2[k] + lam * (1.0 - alpha)
                    )
                diff = new - beta[k]
                if diff != 0.0:
                    resid -= diff * xk
                    beta[k] = new
                    inner_change = max(inner_change, abs(diff))
            if inner_change < 1e-10:
                break
        eta = X @ beta
        change = float(np.max(np.abs(beta - beta_old)))
        _check_cap(beta, col_sd, col_mean)
        if change < EN_OUTER_TOL:
            break
    else:
        raise NonConvergence(
            f"elastic net did not converge in {EN_MAX_OUTER} outer iterations "
            f"(last change {change:.3e})"
        )
    return ProbabilityModel(
        beta=beta,
        method="elastic_net",
        lam=lam,
        alpha=alpha,
        iterations=outer,
        converged=True,
        max_coef_change=change,
        stats=features.stats,
    )


def predict(model: ProbabilityModel, features: FeatureMatrix) -> np.ndarray:
    """Per-row probabilities expit(x @ beta).

    When the model carries training standardization and the matrix is raw,
    the stored statistics are applied first.
    """
    values = features.values
    if model.stats is not None and features.stats is None:
        values = (values - model.stats.mean) / model.stats.sd
    if values.shape[1] != model.beta.shape[0]:
        raise DimensionMismatch(
            f"{values.shape[1]} feature columns for {model.beta.shape[0]} coefficients"
        )
    return expit(values @ model.beta)


# --- treatment model ------------------------------------------------------


@dataclass(frozen=True)
class TreatmentModel:
    """Arm-assignment probabilities for randomized clusters.

    kind "known" or "empirical" stores one probability per arm; kind
    "multinomial_logit" stores per-arm coefficient rows (reference arm = the
    first in the catalog, score fixed at 0) applied to cluster features.
    """

    kind: str
    arms: tuple[str, ...]
    probs: dict[str, float] | None = None
    coef: np.ndarray | None = None  # (n_arms - 1, d)
    spec: FeatureSpec | None = None
    stats: Standardization | None = None
    iterations: int = 0
    gradient_norm: float = 0.0


def _softmax_probs(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def fit_treatment_model(
    ds: StudyDataset,
    mode: str,
    spec: FeatureSpec | None = None,
    known: dict[str, float] | None = None,
) -> TreatmentModel:
    """Fit (or echo) the arm-assignment model on the randomized clusters.

    mode "known" echoes user-supplied per-arm constants (must sum to 1),
    "empirical" uses arm frequencies among s=1 clusters, and
    "multinomial_logit" maximizes the multinomial log-likelihood over
    cluster features by gradient ascent with backtracking, stopping when the
    sup-norm of the mean-log-likelihood gradient falls below 1e-8.
    """
    arms = ds.arms
    if mode == "known":
        if known is None:
            raise ProbabilitiesDontSumToOne("mode 'known' needs a probability map")
        missing = [a for a in arms if a not in known]
        if missing:
            raise EmptyArm(f"known probabilities missing arms {missing}")
        total = sum(known[a] for a in arms)
        if abs(total - 1.0) > 1e-9:
            raise ProbabilitiesDontSumToOne(
                f"known probabilities sum to {total!r}, expected 1"
            )
        if any(not 0.0 < known[a] < 1.0 for a in arms) and len(arms) > 1:
            raise ProbabilitiesDontSumToOne("each probability must lie in (0,1)")
        return TreatmentModel(kind="known", arms=arms, probs={a: float(known[a]) for a in arms})

    s1 = ds.s == 1
    if mode == "empirical":
        n1 = int(s1.sum())
        probs = {a: float(ds.arm_mask(a).sum()) / n1 for a in arms}
        return TreatmentModel(kind="empirical", arms=arms, probs=probs)

    if mode != "multinomial_logit":
        raise ValueError(f"unknown treatment model mode '{mode}'")

    spec = spec or FeatureSpec(use_x=True)
    matrix = cluster_features(ds, replace(spec, standardize=False))
    order = ds.sorted_order
    train_rows = order[s1[order]]
    train = matrix.restrict(train_rows)
    stats = None
    if spec.standardize:
        train = standardize(train)
        stats = train.stats
    X = train.values
    arm_of = np.array(
        [arms.index(ds.clusters[j].arm) for j in train_rows], dtype=int
    )
    n, d = X.shape
    k = len(arms)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), arm_of] = 1.0

    coef = np.zeros((k - 1, d))

    def mean_loglik(b: np.ndarray) -> float:
        scores = np.hstack([np.zeros((n, 1)), X @ b.T])
        # log pi_{a_j} = score_{a_j} - logsumexp(scores)
        mx = scores.max(axis=1)
        lse = mx + np.log(np.exp(scores - mx[:, None]).sum(axis=1))
        return float(np.mean(scores[np.arange(n), arm_of] - lse))

    ll = mean_loglik(coef)
    gnorm = float("inf")
    iterations = 0
    for iterations in range(1, MULTINOMIAL_MAX_ITER + 1):
        scores = np.hstack([np.zeros((n, 1)), X @ coef.T])
        pi = _softmax_probs(scores)
        grad = (onehot[:, 1:] - pi[:, 1:]).T @ X / n
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < MULTINOMIAL_TOL:
            break
        step = 4.0
        for _ in range(60):
            cand = coef + step * grad
            cand_ll = mean_loglik(cand)
            if cand_ll >= ll + 1e-4 * step * float(np.sum(grad * grad)):
                break
            step *= 0.5
        else:
            raise NonConvergence("multinomial logit line search failed")
        coef, ll = cand, cand_ll
    else:
        raise NonConvergence(
            f"multinomial logit gradient ascent did not reach tolerance "
            f"(gradient sup-norm {gnorm:.3e})"
        )
    return TreatmentModel(
        kind="multinomial_logit",
        arms=arms,
        coef=coef,
        spec=spec,
        stats=stats,
        iterations=iterations,
        gradient_norm=gnorm,
    )


def treatment_probabilities(model: TreatmentModel, ds: StudyDataset) -> np.ndarray:
    """(m, n_arms) matrix of assignment probabilities, columns in arm order."""
    k = len(model.arms)
    if model.kind in ("known", "empirical"):
        row = np.array([model.probs[a] for a in model.arms])
        return np.tile(row, (ds.m, 1))
    matrix = cluster_features(ds, replace(model.spec, standardize=False))
    values = matrix.values
    if model.stats is not None:
        values = (values - model.stats.mean) / model.stats.sd
    scores = np.hstack([np.zeros((ds.m, 1)), values @ model.coef.T])
    probs = _softmax_probs(scores)
    if probs.shape[1] != k:
        raise DimensionMismatch("arm catalog changed since the model was fit")
    return probs


# --- the bundled nuisance fit ---------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    """How to fit one probability model (participation or outcome)."""

    method: str = "mle"  # "mle" | "elastic_net"
    lam: float = 0.0
    alpha: float = 1.0
    spec: FeatureSpec = field(default_factory=FeatureSpec)


@dataclass(frozen=True)
class TreatmentConfig:
    mode: str = "empirical"  # "known" | "empirical" | "multinomial_logit"
    known: dict[str, float] | None = None
    spec: FeatureSpec | None = None


@dataclass(frozen=True)
class NuisanceConfig:
    participation: ModelConfig = field(default_factory=ModelConfig)
    treatment: TreatmentConfig = field(default_factory=TreatmentConfig)
    outcome: ModelConfig = field(
        default_factory=lambda: ModelConfig(spec=FeatureSpec(include_individual=True))
    )


@dataclass(frozen=True)
class FittedNuisance:
    """All three fitted nuisance models plus the feature specs that fed them."""

    participation: ProbabilityModel
    treatment: TreatmentModel
    outcome_by_arm: dict[str, ProbabilityModel]
    participation_spec: FeatureSpec
    outcome_spec: FeatureSpec


def _fit_probability(
    config: ModelConfig, train: FeatureMatrix, labels: np.ndarray
) -> ProbabilityModel:
    if config.method == "mle":
        if config.spec.standardize:
            train = standardize(train)
        return fit_logistic_mle(train, labels)
    if config.method == "elastic_net":
        train = standardize(train)
        return fit_logistic_elastic_net(train, labels, config.lam, config.alpha)
    raise ValueError(f"unknown fitting method '{config.method}'")


def fit_nuisance(ds: StudyDataset, config: NuisanceConfig) -> FittedNuisance:
    """Fit participation, treatment, and per-arm outcome models.

    Participation is fit on all m clusters (label S); the treatment model on
    randomized clusters; each arm's outcome model on the individuals of that
    arm's trial clusters (label Y). Training rows are gathered in ascending
    cluster_id order, so a permuted dataset yields identical fits.
    """
    for a in ds.arms:
        if int(ds.arm_mask(a).sum()) < 2:
            raise EmptyArm(f"arm '{a}' has fewer than 2 randomized clusters")

    order = ds.sorted_order

    part_spec = replace(config.participation.spec, include_individual=False)
    part_raw = cluster_features(ds, replace(part_spec, standardize=False))
    participation = _fit_probability(
        config.participation, part_raw.restrict(order), ds.s[order].astype(float)
    )

    treatment = fit_treatment_model(
        ds, config.treatment.mode, spec=config.treatment.spec, known=config.treatment.known
    )

    out_spec = replace(config.outcome.spec, include_individual=True)
    out_raw = individual_features(ds, replace(out_spec, standardize=False))
    # canonical individual order: clusters by id, original order within cluster
    pos = np.empty(ds.m, dtype=int)
    pos[order] = np.arange(ds.m)
    row_order = np.argsort(pos[out_raw.cluster_index], kind="stable")
    out_canon = out_raw.restrict(row_order)
    y_all = np.concatenate(
        [c.y if c.y is not None else np.full(c.n, np.nan) for c in ds.clusters]
    )[row_order]

    outcome_by_arm: dict[str, ProbabilityModel] = {}
    for a in ds.arms:
        mask = ds.arm_mask(a)[out_canon.cluster_index]
        try:
            outcome_by_arm[a] = _fit_probability(
                config.outcome, out_canon.restrict(np.where(mask)[0]), y_all[mask]
            )
        except Separation as exc:
            raise Separation(f"outcome model for arm '{a}': {exc}") from exc

    return FittedNuisance(
        participation=participation,
        treatment=treatment,
        outcome_by_arm=outcome_by_arm,
        participation_spec=part_spec,
        outcome_spec=out_spec,
    )
