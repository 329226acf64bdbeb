"""Natural indirect/direct effects, total effect and mediation proportion.

All measures are functions of theta = (beta; gamma; sigma2?) for an exposure
change ``x_star -> x_new`` at fixed covariate values.  They live on the
identity scale when the outcome is continuous and on the log-odds scale when
it is binary.  ``te`` is always assembled as ``nie + nde``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_ndtr

from .exceptions import InvalidFlavorError, UndefinedMPError
from .models import ThetaEstimate
from .quadrature import DEFAULT_NODES, logistic_normal_ratio

MP_GUARD = 1e-12
PROBIT_SCALE = 1.0 / 1.6


class CaseType(enum.IntEnum):
    CASE1 = 1  # continuous Y, continuous M
    CASE2 = 2  # continuous Y, binary M
    CASE3 = 3  # binary Y, continuous M
    CASE4 = 4  # binary Y, binary M

    @classmethod
    def from_flags(cls, y_binary: bool, m_binary: bool) -> "CaseType":
        return cls(1 + int(m_binary) + 2 * int(y_binary))

    @property
    def y_binary(self):
        return self >= 3

    @property
    def m_binary(self):
        return self in (CaseType.CASE2, CaseType.CASE4)

    @property
    def needs_sigma2(self):
        return self is CaseType.CASE3


class Flavor(str, enum.Enum):
    EXACT = "exact"
    APPROXIMATE = "approximate"
    PROBIT = "probit"


ALLOWED_FLAVORS = {
    CaseType.CASE1: (Flavor.EXACT,),
    CaseType.CASE2: (Flavor.EXACT,),
    CaseType.CASE3: (Flavor.EXACT, Flavor.APPROXIMATE, Flavor.PROBIT),
    CaseType.CASE4: (Flavor.EXACT, Flavor.APPROXIMATE),
}


def check_flavor(case: CaseType, flavor) -> Flavor:
    flavor = Flavor(flavor)
    if flavor not in ALLOWED_FLAVORS[CaseType(case)]:
        allowed = ", ".join(f.value for f in ALLOWED_FLAVORS[CaseType(case)])
        raise InvalidFlavorError(
            f"flavor {flavor.value!r} is not defined for case {int(case)} (allowed: {allowed})")
    return flavor


@dataclass(frozen=True)
class MediationRequest:
    """Exposure contrast and conditioning values for evaluating measures."""

    x_star: float = 0.0
    x_new: float = 1.0
    w_outcome: tuple = ()
    w_mediator: tuple = ()
    flavor: Flavor = Flavor.EXACT
    ghq_nodes: int = DEFAULT_NODES

    def __post_init__(self):
        object.__setattr__(self, "w_outcome", np.asarray(self.w_outcome, dtype=float).ravel())
        object.__setattr__(self, "w_mediator", np.asarray(self.w_mediator, dtype=float).ravel())
        object.__setattr__(self, "flavor", Flavor(self.flavor))

    def with_flavor(self, flavor) -> "MediationRequest":
        return MediationRequest(self.x_star, self.x_new, self.w_outcome,
                                self.w_mediator, flavor, self.ghq_nodes)


@dataclass(frozen=True)
class MeasureSet:
    nie: float
    nde: float
    te: float = field(init=False)
    mp: float = field(init=False)

    def __post_init__(self):
        te = self.nie + self.nde
        object.__setattr__(self, "te", te)
        object.__setattr__(self, "mp", self.nie / te if abs(te) > MP_GUARD else float("nan"))

    @property
    def mp_defined(self) -> bool:
        return not np.isnan(self.mp)

    def checked_mp(self) -> float:
        if not self.mp_defined:
            raise UndefinedMPError(f"|TE| = {abs(self.te):.3g} is below {MP_GUARD:g}")
        return self.mp

    def as_array(self):
        return np.array([self.nie, self.nde, self.te, self.mp])


class _Parts:
    """Unpacked theta plus the two linear predictors at the request's w."""

    def __init__(self, theta: ThetaEstimate, req: MediationRequest):
        beta, gamma, sigma2 = theta.layout.split(theta.theta)
        if req.w_outcome.size != beta.size - 3:
            raise ValueError(f"w_outcome has length {req.w_outcome.size}, "
                             f"outcome model has {beta.size - 3} covariates")
        if req.w_mediator.size != gamma.size - 2:
            raise ValueError(f"w_mediator has length {req.w_mediator.size}, "
                             f"mediator model has {gamma.size - 2} covariates")
        self.b0, self.b1, self.b2 = beta[0], beta[1], beta[2]
        self.g0, self.g1 = gamma[0], gamma[1]
        self.out_w = float(beta[3:] @ req.w_outcome)
        self.med_w = float(gamma[2:] @ req.w_mediator)
        self.sigma2 = sigma2
        self.dx = req.x_new - req.x_star

    def outcome_lin(self, x):
        """beta0 + beta1 x + beta3' w (mediator term excluded)."""
        return self.b0 + self.b1 * x + self.out_w

    def mediator_lin(self, x):
        return self.g0 + self.g1 * x + self.med_w


def _product(theta, req):
    q = _Parts(theta, req)
    return MeasureSet(q.b2 * q.g1 * q.dx, q.b1 * q.dx)


def measures_case1(theta: ThetaEstimate, req: MediationRequest) -> MeasureSet:
    """Continuous outcome and mediator: NIE = b2 g1 (x - x*), NDE = b1 (x - x*)."""
    return _product(theta, req)


def measures_case2(theta: ThetaEstimate, req: MediationRequest) -> MeasureSet:
    q = _Parts(theta, req)
    nie = q.b2 * (expit(q.mediator_lin(req.x_new)) - expit(q.mediator_lin(req.x_star)))
    return MeasureSet(float(nie), q.b1 * q.dx)


def measures_case3_exact(theta: ThetaEstimate, req: MediationRequest) -> MeasureSet:
    """Binary outcome, normal mediator, no rare-outcome assumption.

    With ``R(x_m, x_o)`` the logistic-normal log ratio for mediator exposure
    ``x_m`` and outcome exposure ``x_o``::

        NIE = R(x, x) - R(x*, x)
        NDE = b1 (x - x*) + R(x*, x) - R(x*, x*)
    """
    q = _Parts(theta, req)
    x, xs = req.x_new, req.x_star

    def ratio(x_med, x_out):
        return logistic_normal_ratio(q.mediator_lin(x_med), q.sigma2,
                                     q.outcome_lin(x_out), q.b2, req.ghq_nodes)

    r_xx = ratio(x, x)
    r_sx = ratio(xs, x)
    r_ss = ratio(xs, xs)
    return MeasureSet(r_xx - r_sx, q.b1 * q.dx + r_sx - r_ss)


def measures_case3_approx(theta: ThetaEstimate, req: MediationRequest) -> MeasureSet:
    return _product(theta, req)


def _logit_ndtr(z):
    return log_ndtr(z) - log_ndtr(-z)


def measures_case3_probit(theta: ThetaEstimate, req: MediationRequest) -> MeasureSet:
    """Closed form from replacing expit(z) by Phi(z / 1.6)."""
    q = _Parts(theta, req)
    s = PROBIT_SCALE
    scale = np.sqrt(1.0 + s * s * q.b2 * q.b2 * q.sigma2)

    def lo(x_out, x_med):
        arg = s * (q.outcome_lin(x_out) + q.b2 * q.mediator_lin(x_med)) / scale
        return _logit_ndtr(arg)

    x, xs = req.x_new, req.x_star
    mid = lo(x, xs)
    return MeasureSet(float(lo(x, x) - mid), float(mid - lo(xs, xs)))


def _case4_log_odds(q, x_out, x_med):
    """logit P(Y_{x_out, M_{x_med}} = 1) minus beta0 + beta1 x_out + beta3'w."""
    le = q.outcome_lin(x_out)        # log eta
    lk = q.mediator_lin(x_med)       # log kappa
    b2 = q.b2
    log_a = np.logaddexp.reduce([0.0, b2 + le, b2 + lk, b2 + lk + le])
    log_b = np.logaddexp.reduce([0.0, b2 + le, lk, lk + le])
    return log_a - log_b


def measures_case4_exact(theta: ThetaEstimate, req: MediationRequest) -> MeasureSet:
    """Binary outcome and binary mediator on the log-odds scale.

    With ``eta(x) = exp(b0 + b1 x + b3'w)`` and ``kappa(x) = exp(g0 + g1 x + g2'w)``
    the counterfactual log odds are ``log eta(x_o) + log A - log B`` with
    ``A = 1 + e^{b2} eta(x_o) + e^{b2} kappa(x_m) (1 + eta(x_o))`` and
    ``B = 1 + e^{b2} eta(x_o) + kappa(x_m) (1 + eta(x_o))``.
    """
    q = _Parts(theta, req)
    x, xs = req.x_new, req.x_star
    mid = _case4_log_odds(q, x, xs)
    nie = _case4_log_odds(q, x, x) - mid
    nde = q.b1 * q.dx + mid - _case4_log_odds(q, xs, xs)
    return MeasureSet(float(nie), float(nde))


def measures_case4_approx(theta: ThetaEstimate, req: MediationRequest) -> MeasureSet:
    q = _Parts(theta, req)
    lk_x = q.mediator_lin(req.x_new)
    lk_s = q.mediator_lin(req.x_star)
    # grouped so that b2 = 0 and g1 = 0 both cancel exactly
    nie = ((np.logaddexp(0.0, q.b2 + lk_x) - np.logaddexp(0.0, lk_x))
           - (np.logaddexp(0.0, q.b2 + lk_s) - np.logaddexp(0.0, lk_s)))
    return MeasureSet(float(nie), q.b1 * q.dx)


_DISPATCH = {
    (CaseType.CASE1, Flavor.EXACT): measures_case1,
    (CaseType.CASE2, Flavor.EXACT): measures_case2,
    (CaseType.CASE3, Flavor.EXACT): measures_case3_exact,
    (CaseType.CASE3, Flavor.APPROXIMATE): measures_case3_approx,
    (CaseType.CASE3, Flavor.PROBIT): measures_case3_probit,
    (CaseType.CASE4, Flavor.EXACT): measures_case4_exact,
    (CaseType.CASE4, Flavor.APPROXIMATE): measures_case4_approx,
}


def measure_function(case, flavor):
    """The evaluator for an admissible (case, flavor) pair."""
    case = CaseType(case)
    return _DISPATCH[(case, check_flavor(case, flavor))]


def evaluate(theta: ThetaEstimate, req: MediationRequest, case) -> MeasureSet:
    return measure_function(case, req.flavor)(theta, req)
