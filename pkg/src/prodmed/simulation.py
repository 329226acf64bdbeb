"""Monte Carlo harness for the four data types.

A scenario fixes the data type, sample size, target total effect and
mediation proportion, and the nuisance design values (prevalences,
exposure-mediator correlation).  ``solve_design`` turns those targets into
regression coefficients, ``generate`` draws one dataset, and
``run_scenario`` repeats fit-and-evaluate to report median percent bias,
coverage and variance ratio for NIE and MP.

Randomness for replicate ``r`` derives only from ``(seed, r)``, and results
are reduced in replicate order, so output does not depend on the number of
worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit
from scipy.stats import norm

from .exceptions import ConfigError, MediationError, SolverFailureError, TooManyFailuresError
from .inference import (
    BootstrapConfig,
    bootstrap_statistics,
    delta_covariance,
    fit_models,
    measure_vector,
)
from .inference import MEASURES as _ALL_MEASURES
from .measures import (
    ALLOWED_FLAVORS,
    CaseType,
    Flavor,
    MediationRequest,
    check_flavor,
    measure_function,
)
from .models import Dataset, ThetaEstimate

SIM_MEASURES = ("nie", "mp")
MAX_FAILURE_FRACTION = 0.05
_NEWTON_MAX_ITER = 200
_NEWTON_TOL = 1e-12
_ROUND_TRIP_TOL = 1e-8


@dataclass(frozen=True)
class SimulationScenario:
    case: CaseType
    n: int
    te_target: float
    mp_target: float
    replications: int = 1000
    seed: int = 0
    baseline_outcome_prev: float = 0.03
    baseline_mediator_prev: float = 0.2
    xm_correlation: float = 0.2
    error_skewness: float = 0.0
    bootstrap: BootstrapConfig | None = None
    flavors: tuple | None = None
    covariance: str = "sandwich"
    level: float = 0.95
    name: str = ""

    def __post_init__(self):
        try:
            object.__setattr__(self, "case", CaseType(self.case))
        except ValueError:
            raise ConfigError(f"case: must be 1, 2, 3 or 4, got {self.case!r}") from None
        problems = []
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 5):
            problems.append(f"n: must be an integer >= 5, got {self.n!r}")
        if not (isinstance(self.replications, (int, np.integer)) and self.replications >= 1):
            problems.append(f"replications: must be a positive integer, got {self.replications!r}")
        if not 0.0 < self.mp_target < 1.0:
            problems.append(f"mp: must lie in (0, 1), got {self.mp_target!r}")
        if not (math.isfinite(self.te_target) and self.te_target != 0.0):
            problems.append(f"te: must be finite and non-zero, got {self.te_target!r}")
        for name in ("baseline_outcome_prev", "baseline_mediator_prev"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                problems.append(f"{name}: must lie in (0, 1), got {v!r}")
        if not -1.0 < self.xm_correlation < 1.0:
            problems.append(f"xm_correlation: must lie in (-1, 1), got {self.xm_correlation!r}")
        if self.error_skewness < 0:
            problems.append(f"error_skewness: must be >= 0, got {self.error_skewness!r}")
        elif self.error_skewness > 0 and self.case.m_binary:
            problems.append("error_skewness: only applies to a continuous mediator")
        if self.covariance not in ("sandwich", "model"):
            problems.append(f"covariance: must be 'sandwich' or 'model', got {self.covariance!r}")
        if problems:
            raise ConfigError("; ".join(problems))
        flavors = self.flavors or ALLOWED_FLAVORS[self.case]
        try:
            flavors = tuple(check_flavor(self.case, f) for f in flavors)
        except (ValueError, MediationError) as exc:
            raise ConfigError(f"flavors: {exc}") from None
        object.__setattr__(self, "flavors", flavors)

    @property
    def nie_target(self):
        return self.mp_target * self.te_target

    @property
    def nde_target(self):
        return (1.0 - self.mp_target) * self.te_target


@dataclass(frozen=True)
class DesignParams:
    beta0: float
    beta1: float
    beta2: float
    gamma0: float
    gamma1: float
    sigma2: float | None = None

    def theta(self) -> ThetaEstimate:
        return ThetaEstimate.from_parameters(
            [self.beta0, self.beta1, self.beta2], [self.gamma0, self.gamma1], self.sigma2)


# -- design solving ------------------------------------------------------------------

def gamma1_continuous(corr):
    """Mediator slope giving Corr(X, M) = corr for X ~ Bernoulli(0.5), unit error."""
    return 2.0 * corr / math.sqrt(1.0 - corr * corr)


def binary_correlation(gamma0, gamma1):
    """Corr(X, M) for X ~ Bernoulli(0.5) and logit P(M = 1 | X) = gamma0 + gamma1 X."""
    p0, p1 = expit(gamma0), expit(gamma0 + gamma1)
    pbar = 0.5 * (p0 + p1)
    return (p1 - p0) / (2.0 * math.sqrt(pbar * (1.0 - pbar)))


def gamma1_binary(gamma0, corr):
    if corr == 0.0:
        return 0.0
    lo, hi = (0.0, 1.0) if corr > 0 else (-1.0, 0.0)
    f = lambda g: binary_correlation(gamma0, g) - corr  # noqa: E731
    while f(hi if corr > 0 else lo) * (1 if corr > 0 else -1) < 0:
        if corr > 0:
            hi *= 2.0
        else:
            lo *= 2.0
        if max(abs(lo), abs(hi)) > 1e3:
            raise SolverFailureError(f"correlation {corr} is not attainable")
    return brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def _exact_pair(case, params: DesignParams, nodes):
    req = MediationRequest(0.0, 1.0, flavor=Flavor.EXACT, ghq_nodes=nodes)
    ms = measure_function(case, Flavor.EXACT)(params.theta(), req)
    return np.array([ms.nie, ms.nde])


def _newton_design(scenario, base: DesignParams, nodes):
    target = np.array([scenario.nie_target, scenario.nde_target])
    case = scenario.case

    def resid(b):
        return _exact_pair(case, replace(base, beta1=b[0], beta2=b[1]), nodes) - target

    b = np.array([base.beta1, base.beta2])
    r = resid(b)
    for _ in range(_NEWTON_MAX_ITER):
        if np.max(np.abs(r)) < _NEWTON_TOL:
            break
        h = 1e-6 * np.maximum(1.0, np.abs(b))
        jac = np.column_stack([
            (resid(b + h[j] * e) - resid(b - h[j] * e)) / (2 * h[j])
            for j, e in enumerate(np.eye(2))])
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise SolverFailureError(f"singular Jacobian in design solve: {exc}") from None
        lam = 1.0
        while True:
            r_new = resid(b + lam * step)
            if np.linalg.norm(r_new) < np.linalg.norm(r) or lam < 1e-10:
                break
            lam *= 0.5
        if lam < 1e-10:
            break  # no further progress possible; judged below
        b = b + lam * step
        r = r_new
    if not np.max(np.abs(r)) < _ROUND_TRIP_TOL:
        raise SolverFailureError(
            f"design solve did not reach the targets (residual {np.max(np.abs(r)):.3g})")
    return replace(base, beta1=float(b[0]), beta2=float(b[1]))


def _rare_case4_beta2(gamma0, gamma1, nie):
    """beta2 solving the rare-outcome NIE for a binary mediator (starting value)."""
    def f(b2):
        k0, k1 = gamma0, gamma0 + gamma1
        return (np.logaddexp(0, k0) + np.logaddexp(0, b2 + k1)
                - np.logaddexp(0, k1) - np.logaddexp(0, b2 + k0)) - nie
    try:
        return brentq(f, -60.0, 60.0)
    except ValueError:
        raise SolverFailureError("no beta2 attains the target NIE") from None


def solve_design(scenario: SimulationScenario, nodes=40) -> DesignParams:
    """Regression coefficients that realise the scenario's TE and MP exactly."""
    case = scenario.case
    te, mp = scenario.te_target, scenario.mp_target
    corr = scenario.xm_correlation
    if case.m_binary:
        g0 = float(logit(scenario.baseline_mediator_prev))
        g1 = gamma1_binary(g0, corr)
        sigma2 = None
    else:
        g0, g1, sigma2 = 0.0, gamma1_continuous(corr), 1.0
    if g1 == 0.0:
        raise SolverFailureError("xm_correlation 0 leaves no indirect path")

    if case is CaseType.CASE1:
        return DesignParams(0.0, (1 - mp) * te, mp * te / g1, g0, g1, sigma2)
    if case is CaseType.CASE2:
        return DesignParams(0.0, (1 - mp) * te, mp * te / (expit(g0 + g1) - expit(g0)), g0, g1)

    b0 = float(logit(scenario.baseline_outcome_prev))
    if case is CaseType.CASE3:
        b2 = mp * te / g1
    else:
        b2 = _rare_case4_beta2(g0, g1, mp * te)
    start = DesignParams(b0, (1 - mp) * te, b2, g0, g1, sigma2)
    return _newton_design(scenario, start, nodes)


# -- data generation ------------------------------------------------------------------

def _streams(seed, rep_index):
    ss = np.random.SeedSequence(seed, spawn_key=(rep_index,))
    data_ss, boot_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), int(boot_ss.generate_state(1, np.uint64)[0])


def mediator_errors(rng, n, skewness):
    """Unit-variance, mean-zero errors: normal, or standardized gamma with given skewness."""
    if skewness == 0:
        return rng.standard_normal(n)
    shape = (2.0 / skewness) ** 2
    scale = skewness / 2.0
    b = rng.gamma(shape, scale, n)
    return (b - shape * scale) / (math.sqrt(shape) * scale)


def _draw(scenario, params: DesignParams, rng):
    n = scenario.n
    x = (rng.random(n) < 0.5).astype(float)
    lin_m = params.gamma0 + params.gamma1 * x
    if scenario.case.m_binary:
        m = (rng.random(n) < expit(lin_m)).astype(float)
    else:
        m = lin_m + math.sqrt(params.sigma2) * mediator_errors(rng, n, scenario.error_skewness)
    lin_y = params.beta0 + params.beta1 * x + params.beta2 * m
    if scenario.case.y_binary:
        y = (rng.random(n) < expit(lin_y)).astype(float)
    else:
        y = lin_y + rng.standard_normal(n)
    return Dataset(y, x, m, None, scenario.case.y_binary, scenario.case.m_binary,
                   _validate=False)


def generate(scenario: SimulationScenario, params: DesignParams, rep_index: int) -> Dataset:
    """Dataset for replicate ``rep_index``; identical for identical inputs."""
    return _draw(scenario, params, _streams(scenario.seed, rep_index)[0])


# -- replication ----------------------------------------------------------------------

@dataclass
class _Replicate:
    index: int
    failed: bool = False
    error: str = ""
    n_cases: float = float("nan")
    est: np.ndarray | None = None        # (n_flavors, n_measures)
    var: np.ndarray | None = None
    delta_hit: np.ndarray | None = None
    boot_hit: np.ndarray | None = None


def _measure_columns():
    return [_ALL_MEASURES.index(m) for m in SIM_MEASURES]


def _run_one(scenario: SimulationScenario, params: DesignParams, r: int) -> _Replicate:
    rng, boot_seed = _streams(scenario.seed, r)
    data = _draw(scenario, params, rng)
    out = _Replicate(r)
    if scenario.case.y_binary:
        out.n_cases = float(data.y.sum())
    truth = np.array([scenario.nie_target, scenario.mp_target])
    cols = _measure_columns()
    nf, nm = len(scenario.flavors), len(SIM_MEASURES)
    est = np.empty((nf, nm))
    var = np.empty((nf, nm))
    try:
        theta = fit_models(data, scenario.covariance).theta
        req = MediationRequest(0.0, 1.0)
        for k, fl in enumerate(scenario.flavors):
            rq = req.with_flavor(fl)
            f = measure_vector(theta, rq, scenario.case)
            point = f(theta.theta)
            if not np.all(np.isfinite(point)):
                raise FloatingPointError("undefined measure")
            cov = delta_covariance(f, theta)
            est[k] = point[cols]
            var[k] = np.maximum(np.diag(cov)[cols], 0.0)
        if scenario.bootstrap is not None:
            cfg = replace(scenario.bootstrap, seed=boot_seed)
            stats = bootstrap_statistics(data, req, scenario.case, cfg, scenario.flavors)
            lo_q, hi_q = 0.5 * (1 - scenario.level), 0.5 * (1 + scenario.level)
            q = np.quantile(stats[:, :, cols], [lo_q, hi_q], axis=0, method="linear")
            out.boot_hit = (q[0] <= truth) & (truth <= q[1])
    except (MediationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        out.failed = True
        out.error = f"{type(exc).__name__}: {exc}"
        return out
    z = norm.ppf(0.5 * (1 + scenario.level))
    half = z * np.sqrt(var)
    out.est, out.var = est, var
    out.delta_hit = (est - half <= truth) & (truth <= est + half)
    return out


def _run_block(args):
    scenario, params, reps = args
    return [_run_one(scenario, params, r) for r in reps]


def _run_replicates(scenario, params, workers):
    reps = range(scenario.replications)
    if workers <= 1:
        results = _run_block((scenario, params, reps))
    else:
        blocks = np.array_split(np.arange(scenario.replications), workers * 4)
        chunks = [c for c in blocks if c.size]
        jobs = [(scenario, params, [int(r) for r in c]) for c in chunks]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = [rep for block in ex.map(_run_block, jobs) for rep in block]
    results.sort(key=lambda rep: rep.index)
    return results


# -- metrics --------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureMetrics:
    bias_percent: float
    cr_delta: float
    cr_boot: float | None
    variance_ratio: float
    n_used: int


@dataclass
class SimulationMetrics:
    scenario: SimulationScenario
    params: DesignParams
    cells: dict                     # (flavor value, measure) -> MeasureMetrics
    n_failed: int
    mean_cases: float | None
    estimates: dict = field(default_factory=dict, repr=False)   # (flavor, measure) -> array
    variances: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, key):
        flavor, measure = key
        return self.cells[(Flavor(flavor).value, measure)]


def percent_bias(estimates, truth):
    """Median relative error in percent."""
    return float(np.median((np.asarray(estimates) - truth) / truth) * 100.0)


def variance_ratio(variances, estimates):
    """Median estimated variance over the empirical variance of the estimates."""
    if len(estimates) < 2:
        return float("nan")
    emp = np.var(estimates, ddof=1)
    return float(np.median(variances) / emp) if emp > 0 else float("nan")


def summarize(scenario, params, reps) -> SimulationMetrics:
    ok = [r for r in reps if not r.failed]
    n_failed = len(reps) - len(ok)
    if n_failed > MAX_FAILURE_FRACTION * len(reps):
        first = next(r.error for r in reps if r.failed)
        raise TooManyFailuresError(
            f"{n_failed} of {len(reps)} replications failed (first: {first})")
    cases = [r.n_cases for r in reps if not math.isnan(r.n_cases)]
    metrics = SimulationMetrics(scenario, params, {}, n_failed,
                                float(np.mean(cases)) if cases else None)
    if not ok:
        raise TooManyFailuresError("every replication failed")
    est = np.stack([r.est for r in ok])
    var = np.stack([r.var for r in ok])
    dhit = np.stack([r.delta_hit for r in ok])
    bhit = np.stack([r.boot_hit for r in ok]) if scenario.bootstrap is not None else None
    truth = {"nie": scenario.nie_target, "mp": scenario.mp_target}
    for k, fl in enumerate(scenario.flavors):
        for j, name in enumerate(SIM_MEASURES):
            e = est[:, k, j]
            key = (fl.value, name)
            metrics.estimates[key] = e
            metrics.variances[key] = var[:, k, j]
            metrics.cells[key] = MeasureMetrics(
                bias_percent=percent_bias(e, truth[name]),
                cr_delta=float(dhit[:, k, j].mean()),
                cr_boot=None if bhit is None else float(bhit[:, k, j].mean()),
                variance_ratio=variance_ratio(var[:, k, j], e),
                n_used=len(ok),
            )
    return metrics


def run_scenario(scenario: SimulationScenario, workers: int = 1,
                 params: DesignParams | None = None) -> SimulationMetrics:
    """Replicate generate / fit / evaluate and aggregate the metrics."""
    params = params or solve_design(scenario)
    reps = _run_replicates(scenario, params, workers)
    return summarize(scenario, params, reps)


# -- prevalence sweep ----------------------------------------------------------------------

@dataclass
class SweepRow:
    prevalence: float
    flavor: str
    cells: dict          # measure -> MeasureMetrics (empty when the cell failed)
    n_failed: int | None
    mean_cases: float | None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


def prevalence_sweep(base: SimulationScenario, prevalences, flavors=None, workers=1):
    """Run ``base`` at each baseline outcome prevalence, one row per (prevalence, flavor).

    ``flavors`` defaults to the scenario's own, which in turn default to
    every flavor defined for the case.

    A cell whose design solve or replications fail is reported with its error
    instead of aborting the sweep.
    """
    if not base.case.y_binary:
        raise ConfigError("case: a prevalence sweep needs a binary outcome (case 3 or 4)")
    flavors = tuple(check_flavor(base.case, f) for f in (flavors or base.flavors))
    rows = []
    for prev in prevalences:
        try:
            scen = replace(base, baseline_outcome_prev=float(prev), flavors=flavors)
        except ConfigError as exc:
            rows.extend(SweepRow(float(prev), fl.value, {}, None, None, str(exc)) for fl in flavors)
            continue
        try:
            met = run_scenario(scen, workers)
        except MediationError as exc:
            msg = f"{type(exc).__name__}: {exc}"
            rows.extend(SweepRow(float(prev), fl.value, {}, None, None, msg) for fl in flavors)
            continue
        for fl in flavors:
            cells = {m: met.cells[(fl.value, m)] for m in SIM_MEASURES}
            rows.append(SweepRow(float(prev), fl.value, cells, met.n_failed, met.mean_cases))
    return rows
