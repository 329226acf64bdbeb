"""Interval estimation: multivariate delta method and percentile bootstrap."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .exceptions import (
    BootstrapInstabilityError,
    FitError,
    NonFiniteGradientError,
)
from .measures import CaseType, MediationRequest, MeasureSet, check_flavor, measure_function
from .models import (
    Dataset,
    FittedMediator,
    FittedOutcome,
    ThetaEstimate,
    assemble_theta,
    fit_mediator_model,
    fit_outcome_model,
)

REL_STEP = 1e-5
MEASURES = ("nie", "nde", "te", "mp")


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lower: float
    upper: float
    method: str  # "delta" or "bootstrap"
    level: float = 0.95
    se: float | None = None

    def covers(self, value) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class BootstrapConfig:
    replications: int = 2000
    seed: int = 0
    max_retry_fraction: float = 0.01

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("bootstrap needs at least 2 replications")
        if not 0.0 <= self.max_retry_fraction <= 1.0:
            raise ValueError("max_retry_fraction must lie in [0, 1]")


# -- delta method --------------------------------------------------------------

def fd_steps(theta):
    return REL_STEP * np.maximum(1.0, np.abs(theta))


def numerical_jacobian(f, theta):
    """Central-difference Jacobian of a vector-valued ``f`` at ``theta``.

    Step for coordinate j is ``1e-5 * max(1, |theta_j|)``.
    """
    theta = np.asarray(theta, dtype=float)
    h = fd_steps(theta)
    cols = []
    for j in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[j] += h[j]
        dn[j] -= h[j]
        f_up = np.atleast_1d(np.asarray(f(up), dtype=float))
        f_dn = np.atleast_1d(np.asarray(f(dn), dtype=float))
        if not (np.all(np.isfinite(f_up)) and np.all(np.isfinite(f_dn))):
            raise NonFiniteGradientError(
                f"non-finite value when perturbing parameter {j}")
        cols.append((f_up - f_dn) / (2.0 * h[j]))
    return np.column_stack(cols)


def delta_variance(f, theta: ThetaEstimate) -> float:
    """Delta-method variance ``g' Sigma g`` of the scalar ``f`` at theta."""
    g = numerical_jacobian(f, theta.theta)[0]
    return float(max(g @ theta.cov_theta @ g, 0.0))


def delta_covariance(f, theta: ThetaEstimate):
    """Delta-method covariance of a vector-valued ``f``."""
    jac = numerical_jacobian(f, theta.theta)
    return jac @ theta.cov_theta @ jac.T


def delta_interval(point, variance, level=0.95) -> IntervalEstimate:
    if variance < 0:
        raise ValueError("variance must be non-negative")
    se = float(np.sqrt(variance))
    z = float(norm.ppf(0.5 * (1.0 + level)))
    point = float(point)
    return IntervalEstimate(point, point - z * se, point + z * se, "delta", level, se)


def measure_vector(theta: ThetaEstimate, req: MediationRequest, case):
    """Map a raw theta vector to ``(nie, nde, te, mp)`` for delta-method use."""
    fn = measure_function(case, req.flavor)

    def f(values):
        return fn(theta.with_values(values), req).as_array()

    return f


# -- bootstrap -----------------------------------------------------------------

def replicate_rng(seed, r, attempt=0):
    """Independent stream for bootstrap replicate ``r`` (and retry ``attempt``)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r, attempt)))


def _point_measures(data, req, case, flavors, require_mp=True):
    out = fit_outcome_model(data, covariance=None)
    med = fit_mediator_model(data, covariance=None)
    theta = assemble_theta(out, med, CaseType(case).needs_sigma2)
    res = []
    for fl in flavors:
        ms = measure_function(case, fl)(theta, req)
        if not np.all(np.isfinite([ms.nie, ms.te])) or (require_mp and not ms.mp_defined):
            raise FloatingPointError("non-finite measure in replicate")
        res.append(ms.as_array())
    return np.array(res)


def _replicate_block(args):
    data, req, case, flavors, seed, rs, require_mp = args
    stats = np.empty((len(rs), len(flavors), len(MEASURES)))
    failures = 0
    for i, r in enumerate(rs):
        attempt = 0
        while True:
            idx = replicate_rng(seed, r, attempt).integers(0, data.n, data.n)
            try:
                stats[i] = _point_measures(data.take(idx), req, case, flavors, require_mp)
                break
            except (FitError, FloatingPointError, np.linalg.LinAlgError):
                failures += 1
                attempt += 1
                if attempt > 1000:
                    raise BootstrapInstabilityError(f"replicate {r} failed 1000 redraws")
    return stats, failures


def bootstrap_statistics(data: Dataset, req: MediationRequest, case, cfg: BootstrapConfig,
                         flavors=None, workers=1, require_mp=True):
    """Replicate statistics, shape (R, n_flavors, 4) ordered as ``MEASURES``.

    Replicate ``r`` depends only on ``(cfg.seed, r)``; failed refits are
    redrawn from ``(cfg.seed, r, attempt)``.  A replicate with an undefined
    MP counts as failed unless ``require_mp`` is false, in which case its MP
    is left as NaN.
    """
    case = CaseType(case)
    flavors = tuple(check_flavor(case, f) for f in (flavors or (req.flavor,)))
    R = cfg.replications
    if workers <= 1:
        blocks = [_replicate_block((data, req, case, flavors, cfg.seed, range(R), require_mp))]
    else:
        chunks = np.array_split(np.arange(R), workers * 4)
        jobs = [(data, req, case, flavors, cfg.seed, [int(r) for r in c], require_mp)
                for c in chunks if c.size]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            blocks = list(ex.map(_replicate_block, jobs))
    stats = np.concatenate([b[0] for b in blocks])
    failures = sum(b[1] for b in blocks)
    if failures > cfg.max_retry_fraction * R:
        raise BootstrapInstabilityError(
            f"{failures} failed refits exceed the budget of "
            f"{cfg.max_retry_fraction:g} x {R} replications")
    return stats


def percentile_interval(values, point, level=0.95) -> IntervalEstimate:
    """Linear interpolation between order statistics (type 7)."""
    lo, hi = np.quantile(values, [0.5 * (1.0 - level), 0.5 * (1.0 + level)], method="linear")
    return IntervalEstimate(float(point), float(lo), float(hi), "bootstrap", level, None)


def percentile_bootstrap(data: Dataset, req: MediationRequest, case, cfg: BootstrapConfig,
                         level=0.95, workers=1, point: MeasureSet | None = None):
    """Percentile intervals for nie, te and mp.

    ``point`` is the full-data estimate reported alongside each interval; it
    is refitted when omitted.
    """
    stats = bootstrap_statistics(data, req, case, cfg, workers=workers)[:, 0, :]
    if point is None:
        point = MeasureSet(*_point_measures(data, req, case, (req.flavor,))[0, :2])
    return {name: percentile_interval(stats[:, MEASURES.index(name)],
                                      getattr(point, name), level)
            for name in ("nie", "te", "mp")}


# -- one-stop analysis -------------------------------------------------------------

@dataclass
class MediationEstimate:
    case: CaseType
    flavor: str
    measures: MeasureSet
    delta: dict = field(default_factory=dict)       # name -> IntervalEstimate
    bootstrap: dict = field(default_factory=dict)   # name -> IntervalEstimate


@dataclass
class MediationFit:
    data: Dataset
    case: CaseType
    outcome: FittedOutcome
    mediator: FittedMediator
    theta: ThetaEstimate


def fit_models(data: Dataset, covariance="sandwich") -> MediationFit:
    case = CaseType.from_flags(data.y_binary, data.m_binary)
    out = fit_outcome_model(data, covariance)
    med = fit_mediator_model(data, covariance)
    return MediationFit(data, case, out, med, assemble_theta(out, med, case.needs_sigma2))


def delta_estimates(theta: ThetaEstimate, req: MediationRequest, case, level=0.95):
    """Point measures plus delta intervals for nie, te and mp."""
    ms = measure_function(case, req.flavor)(theta, req)
    out = {}
    if ms.mp_defined:
        cov = delta_covariance(measure_vector(theta, req, case), theta)
        names = MEASURES
    else:
        f = measure_vector(theta, req, case)
        cov = delta_covariance(lambda v: f(v)[:3], theta)
        names = MEASURES[:3]
    for i, name in enumerate(names):
        if name != "nde":
            out[name] = delta_interval(getattr(ms, name), max(cov[i, i], 0.0), level)
    return ms, out


def mediate(data: Dataset, req: MediationRequest, flavors=None, covariance="sandwich",
            bootstrap: BootstrapConfig | None = None, level=0.95, workers=1):
    """Fit both models and report every requested flavor.

    Returns ``(MediationFit, list[MediationEstimate])``.  All flavors share the
    same bootstrap resamples.
    """
    fit = fit_models(data, covariance)
    flavors = tuple(check_flavor(fit.case, f) for f in (flavors or (req.flavor,)))
    estimates = []
    for fl in flavors:
        ms, delta = delta_estimates(fit.theta, req.with_flavor(fl), fit.case, level)
        estimates.append(MediationEstimate(fit.case, fl.value, ms, delta))
    if bootstrap is not None:
        # a null contrast has no MP to resample; keep NIE and TE intervals
        need_mp = all(est.measures.mp_defined for est in estimates)
        stats = bootstrap_statistics(data, req, fit.case, bootstrap, flavors, workers, need_mp)
        for k, est in enumerate(estimates):
            for name in ("nie", "te", "mp") if need_mp else ("nie", "te"):
                point = getattr(est.measures, name)
                est.bootstrap[name] = percentile_interval(
                    stats[:, k, MEASURES.index(name)], point, level)
    return fit, estimates


__all__ = [
    "BootstrapConfig", "IntervalEstimate", "MediationEstimate", "MediationFit",
    "bootstrap_statistics", "delta_covariance", "delta_estimates", "delta_interval",
    "delta_variance", "fit_models", "mediate", "measure_vector", "numerical_jacobian",
    "percentile_bootstrap", "percentile_interval", "replicate_rng",
]
