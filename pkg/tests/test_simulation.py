import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import expit, logit
from scipy.stats import skew

from prodmed.exceptions import ConfigError, TooManyFailuresError
from prodmed.inference import BootstrapConfig
from prodmed.measures import CaseType, Flavor, MediationRequest, measure_function
from prodmed.simulation import (
    SimulationScenario,
    binary_correlation,
    generate,
    mediator_errors,
    percent_bias,
    prevalence_sweep,
    run_scenario,
    solve_design,
    variance_ratio,
)

LOG2 = math.log(2.0)


def round_trip(scen):
    params = solve_design(scen)
    ms = measure_function(scen.case, Flavor.EXACT)(params.theta(), MediationRequest(0, 1))
    return params, ms


# -- design solving ---------------------------------------------------------

def test_case1_gamma1_reference_value():
    params = solve_design(SimulationScenario(1, 100, 1.0, 0.5))
    assert round(params.gamma1, 3) == 0.408


def test_case2_gamma1_reference_value():
    params = solve_design(SimulationScenario(2, 100, 1.0, 0.5))
    # exact root is 0.90378; the reference 0.903 is its 3-decimal truncation
    assert math.floor(params.gamma1 * 1000) / 1000 == 0.903
    assert abs(params.gamma1 - 0.903) < 1e-3
    assert abs(binary_correlation(params.gamma0, params.gamma1) - 0.2) < 1e-12
    assert abs(expit(params.gamma0) - 0.2) < 1e-15


@pytest.mark.parametrize("case", [1, 2, 3, 4])
@pytest.mark.parametrize("te", [0.25, 0.5, 1.0, LOG2, math.log(1.5)])
@pytest.mark.parametrize("mp", [0.05, 0.2, 0.5])
def test_design_round_trip(case, te, mp):
    scen = SimulationScenario(case, 100, te, mp)
    _, ms = round_trip(scen)
    assert abs(ms.te - te) < 1e-8 and abs(ms.mp - mp) < 1e-8


@pytest.mark.parametrize("prev", [0.01, 0.03, 0.1, 0.25, 0.5])
@pytest.mark.parametrize("case", [3, 4])
def test_round_trip_over_prevalence(case, prev):
    scen = SimulationScenario(case, 100, LOG2, 0.5, baseline_outcome_prev=prev)
    params, ms = round_trip(scen)
    assert abs(params.beta0 - logit(prev)) < 1e-15
    assert abs(ms.nie - 0.5 * LOG2) < 1e-8 and abs(ms.nde - 0.5 * LOG2) < 1e-8


# -- generation -------------------------------------------------------------

def test_normal_errors_symmetric():
    e = mediator_errors(np.random.default_rng(0), 10**6, 0.0)
    assert abs(skew(e)) < 0.01


def test_gamma_errors_moments():
    e = mediator_errors(np.random.default_rng(1), 10**6, 2.0)
    assert abs(skew(e) - 2.0) < 0.05
    assert abs(e.var() - 1.0) < 0.01
    assert abs(e.mean()) < 0.005


def test_generate_deterministic():
    scen = SimulationScenario(3, 500, LOG2, 0.5, seed=4)
    params = solve_design(scen)
    a, b = generate(scen, params, 7), generate(scen, params, 7)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.m, b.m)
    assert not np.array_equal(a.m, generate(scen, params, 8).m)


def test_generator_moments_case1():
    scen = SimulationScenario(1, 10**6, 1.0, 0.5, seed=2)
    data = generate(scen, solve_design(scen), 0)
    assert abs(data.x.mean() - 0.5) < 0.005
    assert abs(np.corrcoef(data.x, data.m)[0, 1] - 0.2) < 0.02


def test_generator_moments_case4():
    scen = SimulationScenario(4, 10**6, LOG2, 0.5, baseline_outcome_prev=0.1, seed=3)
    data = generate(scen, solve_design(scen), 0)
    x0 = data.x == 0
    assert abs(np.corrcoef(data.x, data.m)[0, 1] - 0.2) < 0.02
    assert abs(data.m[x0].mean() - 0.2) < 0.005
    assert abs(data.y[x0 & (data.m == 0)].mean() - 0.1) < 0.005


# -- metrics ----------------------------------------------------------------

def test_percent_bias_symmetric_errors():
    assert percent_bias([9.0, 10.0, 11.0], 10.0) == 0.0


def test_variance_ratio_identity():
    est = np.array([1.0, 2.0, 4.0, 7.0])
    emp = est.var(ddof=1)
    assert variance_ratio(np.full(4, emp), est) == 1.0


def test_single_replication():
    met = run_scenario(SimulationScenario(1, 200, 1.0, 0.5, replications=1, seed=1))
    cell = met[("exact", "nie")]
    assert cell.cr_delta in (0.0, 1.0)
    assert math.isnan(cell.variance_ratio)


def test_full_coverage_gives_one():
    # a huge sample makes every interval cover with overwhelming probability
    met = run_scenario(SimulationScenario(1, 200000, 1.0, 0.5, replications=3, seed=2,
                                          level=0.999999))
    assert met[("exact", "nie")].cr_delta == 1.0


def test_run_scenario_parallel_identical():
    scen = SimulationScenario(4, 2000, LOG2, 0.5, replications=12, seed=5,
                              bootstrap=BootstrapConfig(20))
    a = run_scenario(scen)
    b = run_scenario(scen, workers=3)
    assert a.cells == b.cells and a.n_failed == b.n_failed
    for key in a.estimates:
        assert a.estimates[key].tobytes() == b.estimates[key].tobytes()
    for c in a.cells.values():
        assert 0 <= c.cr_delta <= 1 and 0 <= c.cr_boot <= 1


def test_too_many_failures():
    scen = SimulationScenario(4, 40, LOG2, 0.5, baseline_outcome_prev=0.01, replications=20)
    with pytest.raises(TooManyFailuresError):
        run_scenario(scen)


def test_scenario_validation():
    with pytest.raises(ConfigError, match="mp"):
        SimulationScenario(1, 100, 1.0, 1.5)
    with pytest.raises(ConfigError, match="baseline_outcome_prev"):
        SimulationScenario(3, 100, 1.0, 0.5, baseline_outcome_prev=0.0)
    with pytest.raises(ConfigError, match="error_skewness"):
        SimulationScenario(4, 100, 1.0, 0.5, error_skewness=1.0)
    with pytest.raises(ConfigError, match="flavors"):
        SimulationScenario(1, 100, 1.0, 0.5, flavors=("probit",))


# -- sweep ------------------------------------------------------------------

def test_degenerate_sweep_matches_run_scenario():
    base = SimulationScenario(4, 3000, LOG2, 0.5, replications=10, seed=8)
    (row,) = prevalence_sweep(base, [0.1], flavors=("approximate",))
    direct = run_scenario(replace(base, baseline_outcome_prev=0.1, flavors=("approximate",)))
    assert row.ok and row.cells["mp"] == direct[("approximate", "mp")]
    assert row.cells["nie"] == direct[("approximate", "nie")]


def test_sweep_records_failed_cells():
    base = SimulationScenario(4, 40, LOG2, 0.5, replications=10, seed=1)
    rows = prevalence_sweep(base, [0.01, 0.5])
    assert [r.prevalence for r in rows] == [0.01, 0.01, 0.5, 0.5]
    assert not rows[0].ok and "TooManyFailures" in rows[0].error
    assert rows[0].cells == {}


def test_sweep_shape_case3_includes_probit():
    base = SimulationScenario(3, 2000, LOG2, 0.5, replications=3, seed=2)
    rows = prevalence_sweep(base, [0.05, 0.25])
    assert [(r.prevalence, r.flavor) for r in rows] == [
        (0.05, "exact"), (0.05, "approximate"), (0.05, "probit"),
        (0.25, "exact"), (0.25, "approximate"), (0.25, "probit"),
    ]


def test_sweep_rejects_continuous_outcome():
    with pytest.raises(ConfigError):
        prevalence_sweep(SimulationScenario(1, 100, 1.0, 0.5), [0.1])


def test_case3_approximate_nie_robust_at_small_mp():
    base = SimulationScenario(3, 20000, LOG2, 0.1, replications=150, seed=21)
    rows = prevalence_sweep(base, [0.01, 0.1, 0.5], flavors=("approximate",))
    for row in rows:
        assert abs(row.cells["nie"].bias_percent) < 3, row


def test_case_type_coercion():
    assert SimulationScenario(2, 100, 1.0, 0.5).case is CaseType.CASE2


def test_sweep_defaults_to_scenario_flavors():
    base = SimulationScenario(3, 1500, LOG2, 0.5, replications=2, flavors=("approximate",))
    assert [r.flavor for r in prevalence_sweep(base, [0.1, 0.2])] == ["approximate"] * 2
