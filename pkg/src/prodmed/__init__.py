"""Product-method mediation analysis for continuous and binary outcomes and mediators."""

__version__ = "0.1.0"

from .exceptions import *  # noqa: E402,F401,F403
from .inference import (  # noqa: E402
    BootstrapConfig,
    IntervalEstimate,
    MediationEstimate,
    MediationFit,
    delta_estimates,
    fit_models,
    mediate,
    percentile_bootstrap,
)
from .measures import (  # noqa: E402
    CaseType,
    Flavor,
    MeasureSet,
    MediationRequest,
    evaluate,
    measure_function,
)
from .models import (  # noqa: E402
    Dataset,
    ThetaEstimate,
    assemble_theta,
    fit_mediator_model,
    fit_outcome_model,
)
from .quadrature import logistic_normal_ratio, logit_expit_normal  # noqa: E402
from .simulation import (  # noqa: E402
    DesignParams,
    SimulationMetrics,
    SimulationScenario,
    generate,
    prevalence_sweep,
    run_scenario,
    solve_design,
)
