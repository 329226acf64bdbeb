"""Outcome and mediator regressions fitted by estimating equations.

The outcome model regresses ``Y`` on ``[1, X, M, W]`` and the mediator model
regresses ``M`` on ``[1, X, W]``.  Both use the canonical working variance
for their link, so the estimating equation coincides with the likelihood
score and IRLS is Newton's method on it.  Coefficient covariances are
available both as the inverse information and as the robust sandwich
``A^{-1} B A^{-T} / n``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import (
    InvalidDataError,
    MissingSigma2Error,
    NonConvergenceError,
    RankDeficientError,
    SeparationError,
)

MAX_ITER = 100
COEF_TOL = 1e-10
SCORE_TOL = 1e-8  # scaled by n
SEPARATION_ETA = 30.0
_RCOND = 1e-12


class Link(str, enum.Enum):
    IDENTITY = "identity"
    LOGIT = "logit"


def _is_binary(v):
    return bool(np.all((v == 0) | (v == 1)))


@dataclass(frozen=True)
class Dataset:
    """Numeric records ``(Y, X, M, W)`` with declared variable types.

    ``w`` holds the outcome-model covariates.  ``w_mediator`` holds the
    mediator-model covariates and defaults to ``w`` when omitted, so the two
    models may adjust for different sets.
    """

    y: np.ndarray
    x: np.ndarray
    m: np.ndarray
    w: np.ndarray | None = None
    y_binary: bool = False
    m_binary: bool = False
    w_mediator: np.ndarray | None = None
    _validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        n = np.shape(self.y)[0]
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        m = np.asarray(self.m, dtype=float)
        w = np.empty((n, 0)) if self.w is None else np.asarray(self.w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        wm = w if self.w_mediator is None else np.asarray(self.w_mediator, dtype=float)
        if wm.ndim == 1:
            wm = wm[:, None]
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "w_mediator", wm)
        if self._validate:
            self._check()

    def _check(self):
        n = self.n
        for name in ("y", "x", "m"):
            v = getattr(self, name)
            if v.ndim != 1 or v.shape[0] != n:
                raise InvalidDataError(f"{name} must be a vector of length {n}")
        for name in ("w", "w_mediator"):
            if getattr(self, name).shape[0] != n:
                raise InvalidDataError(f"{name} must have {n} rows")
        for name in ("y", "x", "m", "w", "w_mediator"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidDataError(f"{name} contains NaN or Inf")
        if self.y_binary and not _is_binary(self.y):
            raise InvalidDataError("y declared binary but has values other than 0/1")
        if self.m_binary and not _is_binary(self.m):
            raise InvalidDataError("m declared binary but has values other than 0/1")
        p = max(self.p, self.p_mediator)
        if n < p + 3:
            raise InvalidDataError(f"need at least {p + 3} records, got {n}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    @property
    def p_mediator(self) -> int:
        return self.w_mediator.shape[1]

    def take(self, idx) -> "Dataset":
        """Row subset without re-validation (used by resampling)."""
        return Dataset(
            self.y[idx], self.x[idx], self.m[idx], self.w[idx],
            self.y_binary, self.m_binary, self.w_mediator[idx], _validate=False,
        )

    def outcome_design(self):
        return np.column_stack([np.ones(self.n), self.x, self.m, self.w])

    def mediator_design(self):
        return np.column_stack([np.ones(self.n), self.x, self.w_mediator])


@dataclass(frozen=True)
class GLMFit:
    coef: np.ndarray
    cov_model: np.ndarray | None
    cov_sandwich: np.ndarray | None
    converged: bool
    iterations: int
    score: np.ndarray


def _solve_spd(a, b):
    # eigen-decomposition doubles as the rank check
    vals, vecs = np.linalg.eigh(a)
    if vals[0] <= _RCOND * max(vals[-1], 1e-300):
        raise RankDeficientError("design matrix is not of full column rank")
    return vecs @ ((vecs.T @ b) / (vals if b.ndim == 1 else vals[:, None])), (vecs, vals)


def _inverse(eig):
    vecs, vals = eig
    return (vecs / vals) @ vecs.T


def fit_glm(design, response, link=Link.IDENTITY, compute_cov=True) -> GLMFit:
    """Solve the canonical-link estimating equation by IRLS.

    Parameters
    ----------
    design : (n, k) array
        Must have full column rank.
    response : (n,) array
        0/1 when ``link`` is logit.
    link : Link
    compute_cov : bool
        Skip both covariance estimates when False (resampling loops).

    Returns
    -------
    GLMFit
        ``cov_model`` is the inverse information (scaled by the Pearson
        dispersion with ``n - k`` denominator for the identity link);
        ``cov_sandwich`` is ``A^{-1} B A^{-T} / n``.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n, k = X.shape
    link = Link(link)
    if link is Link.IDENTITY:
        coef, eig = _solve_spd(X.T @ X, X.T @ y)
        resid = y - X @ coef
        score = X.T @ resid
        if not np.max(np.abs(score)) < SCORE_TOL * n * max(1.0, np.max(np.abs(y))):
            # one refinement step absorbs roundoff on badly scaled data
            coef = coef + _solve_spd(X.T @ X, score)[0]
            resid = y - X @ coef
            score = X.T @ resid
        iterations = 1
    else:
        coef, iterations, score, eig, resid = _irls_logit(X, y)
    if not compute_cov:
        return GLMFit(coef, None, None, True, iterations, score)

    bread = _inverse(eig)  # (X' W X)^{-1}
    if link is Link.IDENTITY:
        dispersion = resid @ resid / max(n - k, 1)
        cov_model = dispersion * bread
    else:
        cov_model = bread
    meat = (X * resid[:, None] ** 2).T @ X
    cov_sandwich = bread @ meat @ bread
    cov_model = 0.5 * (cov_model + cov_model.T)
    cov_sandwich = 0.5 * (cov_sandwich + cov_sandwich.T)
    return GLMFit(coef, cov_model, cov_sandwich, True, iterations, score)


def _irls_logit(X, y):
    n = X.shape[0]
    if y.min() == y.max():
        raise SeparationError("binary response is constant; logistic fit diverges")
    coef = np.zeros(X.shape[1])
    if np.all(X[:, 0] == 1.0):
        ybar = y.mean()
        coef[0] = np.log(ybar / (1.0 - ybar))
    eta = X @ coef
    for it in range(1, MAX_ITER + 1):
        mu = expit(eta)
        w = mu * (1.0 - mu)
        score = X.T @ (y - mu)
        step, eig = _solve_spd((X * w[:, None]).T @ X, score)
        coef = coef + step
        eta = X @ coef
        mu = expit(eta)
        score = X.T @ (y - mu)
        converged = (np.max(np.abs(step)) < COEF_TOL
                     and np.max(np.abs(score)) < SCORE_TOL * n)
        if converged:
            w = mu * (1.0 - mu)
            _, eig = _solve_spd((X * w[:, None]).T @ X, score)
            return coef, it, score, eig, y - mu
        if np.max(np.abs(eta)) > SEPARATION_ETA:
            raise SeparationError(
                f"|linear predictor| exceeded {SEPARATION_ETA:g} before convergence "
                "(complete or quasi-complete separation)")
    raise NonConvergenceError(f"IRLS did not converge in {MAX_ITER} iterations")


# -- model-level wrappers -------------------------------------------------------

@dataclass(frozen=True)
class FittedOutcome:
    beta: np.ndarray  # (b0, b1, b2, b3_1..b3_p)
    cov_beta: np.ndarray | None
    link: Link
    converged: bool
    iterations: int


@dataclass(frozen=True)
class FittedMediator:
    gamma: np.ndarray  # (g0, g1, g2_1..g2_p)
    cov_gamma: np.ndarray | None
    link: Link
    sigma2: float | None = None
    var_sigma2: float | None = None
    converged: bool = True
    iterations: int = 1


def _pick_cov(fit, covariance):
    if covariance is None:
        return None
    if covariance == "sandwich":
        return fit.cov_sandwich
    if covariance == "model":
        return fit.cov_model
    raise ValueError(f"covariance must be 'sandwich', 'model' or None, not {covariance!r}")


def fit_outcome_model(data: Dataset, covariance="sandwich") -> FittedOutcome:
    link = Link.LOGIT if data.y_binary else Link.IDENTITY
    fit = fit_glm(data.outcome_design(), data.y, link, compute_cov=covariance is not None)
    return FittedOutcome(fit.coef, _pick_cov(fit, covariance), link,
                         fit.converged, fit.iterations)


def fit_mediator_model(data: Dataset, covariance="sandwich") -> FittedMediator:
    """Fit the mediator regression.

    For a continuous mediator the residual variance solves
    ``sum_i (sigma2 - r_i^2) = 0``, i.e. it is the mean squared residual, and
    its variance is the sandwich of that scalar equation,
    ``sum_i (r_i^2 - sigma2)^2 / n^2``.
    """
    link = Link.LOGIT if data.m_binary else Link.IDENTITY
    X = data.mediator_design()
    fit = fit_glm(X, data.m, link, compute_cov=covariance is not None)
    sigma2 = var_sigma2 = None
    if link is Link.IDENTITY:
        r2 = (data.m - X @ fit.coef) ** 2
        sigma2 = float(r2.mean())
        var_sigma2 = float(np.sum((r2 - sigma2) ** 2) / data.n ** 2)
    return FittedMediator(fit.coef, _pick_cov(fit, covariance), link, sigma2,
                          var_sigma2, fit.converged, fit.iterations)


# -- parameter vector ------------------------------------------------------------

@dataclass(frozen=True)
class ThetaLayout:
    """Index bookkeeping for theta = (beta; gamma; sigma2?)."""

    p_outcome: int
    p_mediator: int
    has_sigma2: bool

    @property
    def n_beta(self):
        return self.p_outcome + 3

    @property
    def n_gamma(self):
        return self.p_mediator + 2

    @property
    def size(self):
        return self.n_beta + self.n_gamma + int(self.has_sigma2)

    def split(self, theta):
        nb, ng = self.n_beta, self.n_gamma
        beta = theta[:nb]
        gamma = theta[nb:nb + ng]
        sigma2 = theta[nb + ng] if self.has_sigma2 else None
        return beta, gamma, sigma2

    def index(self, name):
        """Position of a named scalar parameter, e.g. ``'beta2'``, ``'gamma1'``."""
        fixed = {"beta0": 0, "beta1": 1, "beta2": 2,
                 "gamma0": self.n_beta, "gamma1": self.n_beta + 1}
        if name == "sigma2":
            if not self.has_sigma2:
                raise KeyError("layout has no sigma2")
            return self.n_beta + self.n_gamma
        return fixed[name]


@dataclass(frozen=True)
class ThetaEstimate:
    theta: np.ndarray
    cov_theta: np.ndarray | None
    layout: ThetaLayout

    def with_values(self, theta) -> "ThetaEstimate":
        return ThetaEstimate(np.asarray(theta, dtype=float), self.cov_theta, self.layout)

    @classmethod
    def from_parameters(cls, beta, gamma, sigma2=None, cov=None):
        """Build a point value (no data) from coefficient vectors."""
        beta = np.asarray(beta, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        layout = ThetaLayout(beta.size - 3, gamma.size - 2, sigma2 is not None)
        parts = [beta, gamma] + ([np.array([float(sigma2)])] if sigma2 is not None else [])
        return cls(np.concatenate(parts), cov, layout)


def assemble_theta(outcome: FittedOutcome, mediator: FittedMediator,
                   needs_sigma2: bool) -> ThetaEstimate:
    """Stack the two fits with a block-diagonal covariance.

    The estimating equations for beta, gamma and sigma2 are asymptotically
    uncorrelated, so the cross blocks are set to exactly zero.
    """
    if needs_sigma2 and mediator.sigma2 is None:
        raise MissingSigma2Error("sigma2 requested but the mediator model has none")
    blocks_theta = [outcome.beta, mediator.gamma]
    blocks_cov = [outcome.cov_beta, mediator.cov_gamma]
    if needs_sigma2:
        blocks_theta.append(np.array([mediator.sigma2]))
        blocks_cov.append(None if mediator.var_sigma2 is None
                          else np.array([[mediator.var_sigma2]]))
    theta = np.concatenate(blocks_theta)
    layout = ThetaLayout(outcome.beta.size - 3, mediator.gamma.size - 2, needs_sigma2)
    if any(b is None for b in blocks_cov):
        return ThetaEstimate(theta, None, layout)
    cov = np.zeros((theta.size, theta.size))
    i = 0
    for b in blocks_cov:
        j = i + b.shape[0]
        cov[i:j, i:j] = b
        i = j
    return ThetaEstimate(theta, cov, layout)
