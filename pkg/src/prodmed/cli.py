"""Command-line front end.

Three subcommands::

    prodmed analyze  --data FILE --outcome Y --mediator M --exposure X [...]
    prodmed simulate SCENARIO.toml --out metrics.csv
    prodmed sweep    SWEEP.toml    --out sweep.csv

Exit codes: 0 success, 2 input or configuration error, 3 model-fit failure,
4 bootstrap instability, 5 design-solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .exceptions import (
    BootstrapInstabilityError,
    ConfigError,
    InputError,
    MediationError,
    MissingColumnError,
    MissingValueError,
    NonBinaryValueError,
    NonNumericCellError,
    SolverFailureError,
)
from .inference import BootstrapConfig, mediate
from .measures import CaseType, Flavor, MediationRequest
from .models import Dataset
from .simulation import SIM_MEASURES, SimulationScenario, prevalence_sweep, run_scenario

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_INPUT, EXIT_FIT, EXIT_BOOT, EXIT_SOLVER = 2, 3, 4, 5
FLAVOR_CHOICES = ("both", "exact", "approximate", "probit")


# -- analysis configuration and CSV input ---------------------------------------------

@dataclass
class AnalysisConfig:
    data_path: str
    outcome: str
    mediator: str
    exposure: str
    binary_outcome: bool = False
    binary_mediator: bool = False
    covariates_outcome: list = field(default_factory=list)
    covariates_mediator: list = field(default_factory=list)
    x0: float = 0.0
    x1: float = 1.0
    c_outcome: list | None = None
    c_mediator: list | None = None
    boot: bool = False
    boot_r: int = 2000
    seed: int = 0
    flavor: str = "both"
    level: float = 0.95
    covariance: str = "sandwich"

    def __post_init__(self):
        if self.c_outcome is None:
            self.c_outcome = [0.0] * len(self.covariates_outcome)
        if self.c_mediator is None:
            self.c_mediator = [0.0] * len(self.covariates_mediator)
        if len(self.c_outcome) != len(self.covariates_outcome):
            raise ConfigError(f"c_outcome: {len(self.c_outcome)} values for "
                              f"{len(self.covariates_outcome)} outcome covariates")
        if len(self.c_mediator) != len(self.covariates_mediator):
            raise ConfigError(f"c_mediator: {len(self.c_mediator)} values for "
                              f"{len(self.covariates_mediator)} mediator covariates")
        if self.flavor not in FLAVOR_CHOICES:
            raise ConfigError(f"flavor: must be one of {', '.join(FLAVOR_CHOICES)}")
        if self.boot and self.boot_r < 2:
            raise ConfigError("boot_r: need at least 2 bootstrap replications")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level: must lie in (0, 1), got {self.level}")
        if self.covariance not in ("sandwich", "model"):
            raise ConfigError(f"covariance: must be 'sandwich' or 'model', got {self.covariance!r}")

    @property
    def case(self) -> CaseType:
        return CaseType.from_flags(self.binary_outcome, self.binary_mediator)

    def flavors(self):
        """Requested flavors in display order (approximate before exact)."""
        case = self.case
        if self.flavor == "both":
            if case.y_binary:
                return (Flavor.APPROXIMATE, Flavor.EXACT)
            return (Flavor.EXACT,)
        return (Flavor(self.flavor),)


def load_csv(path, config: AnalysisConfig) -> Dataset:
    """Read the columns named in ``config`` into a validated Dataset.

    Cells are reported by file line (header is line 1) and column name.
    Missing values are rejected, never imputed.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file, header row required") from None
        roles = [config.outcome, config.exposure, config.mediator,
                 *config.covariates_outcome, *config.covariates_mediator]
        index = {}
        for name in roles:
            if name not in header:
                raise MissingColumnError(name)
            index[name] = header.index(name)
        binary = {config.outcome: config.binary_outcome,
                  config.mediator: config.binary_mediator}
        cols = {name: [] for name in index}
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue  # blank line
            for name, j in index.items():
                cell = row[j].strip() if j < len(row) else ""
                if cell == "" or cell.upper() in ("NA", "NAN"):
                    raise MissingValueError(line, name)
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCellError(line, name, cell) from None
                if not math.isfinite(v):
                    raise NonNumericCellError(line, name, cell)
                if binary.get(name) and v not in (0.0, 1.0):
                    raise NonBinaryValueError(line, name, cell)
                cols[name].append(v)

    def mat(names):
        n = len(cols[config.outcome])
        return np.column_stack([cols[c] for c in names]) if names else np.empty((n, 0))

    return Dataset(
        np.array(cols[config.outcome]), np.array(cols[config.exposure]),
        np.array(cols[config.mediator]), mat(config.covariates_outcome),
        config.binary_outcome, config.binary_mediator, mat(config.covariates_mediator),
    )


# -- analysis -------------------------------------------------------------------------

@dataclass
class ResultRow:
    measure: str              # NIE, TE or MP
    flavor: str
    point: float | None
    se: float | None
    delta_ci: tuple | None
    boot_ci: tuple | None = None
    undefined: bool = False

    def label(self, show_flavor):
        return f"{self.measure}: {self.flavor.capitalize()}" if show_flavor else self.measure


def _interval_pair(iv):
    return None if iv is None else (iv.lower, iv.upper)


def analyze(config: AnalysisConfig, workers=1):
    """Fit, evaluate and return ``(fit, rows)`` for the configured contrast."""
    data = load_csv(config.data_path, config)
    req = MediationRequest(config.x0, config.x1, config.c_outcome, config.c_mediator)
    boot = BootstrapConfig(config.boot_r, config.seed) if config.boot else None
    fit, estimates = mediate(data, req, config.flavors(), config.covariance, boot,
                             config.level, workers)
    rows = []
    for name in ("nie", "te", "mp"):
        for est in estimates:
            point = getattr(est.measures, name)
            undefined = name == "mp" and not est.measures.mp_defined
            d = est.delta.get(name)
            b = est.bootstrap.get(name)
            rows.append(ResultRow(
                name.upper(), est.flavor,
                None if undefined else float(point),
                None if d is None else d.se,
                _interval_pair(d),
                _interval_pair(b),
                undefined,
            ))
    return fit, rows


def _fmt(v):
    return f"{v:.4f}"


def render_table(rows, level=0.95, boot=False) -> str:
    """Fixed-width table, four decimals, one line per (measure, flavor)."""
    show_flavor = len({r.flavor for r in rows}) > 1 or any(
        r.flavor != Flavor.EXACT.value for r in rows)
    pct = f"{100 * level:g}%"
    head = f"{'':<18}{'Point':>10}{'S.E.':>10}   {pct + ' CI (delta)':<22}"
    if boot:
        head += f"   {pct + ' CI (bootstrap)':<22}"
    lines = [head.rstrip()]
    for r in rows:
        label = r.label(show_flavor)
        if r.undefined:
            lines.append(f"{label:<18}{'undefined':>10}   (total effect is zero)")
            continue
        se = _fmt(r.se) if r.se is not None else "NA"
        ci = f"({_fmt(r.delta_ci[0])}, {_fmt(r.delta_ci[1])})" if r.delta_ci else "NA"
        line = f"{label:<18}{_fmt(r.point):>10}{se:>10}   {ci:<22}"
        if boot:
            bci = f"({_fmt(r.boot_ci[0])}, {_fmt(r.boot_ci[1])})" if r.boot_ci else "NA"
            line += f"   {bci:<22}"
        lines.append(line.rstrip())
    return "\n".join(lines) + "\n"


def result_document(config: AnalysisConfig, fit, rows) -> dict:
    diag = {
        "n": fit.data.n,
        "case": int(fit.case),
        "covariance": config.covariance,
        "outcome": {"link": fit.outcome.link.value, "converged": fit.outcome.converged,
                    "iterations": fit.outcome.iterations},
        "mediator": {"link": fit.mediator.link.value, "converged": fit.mediator.converged,
                     "iterations": fit.mediator.iterations, "sigma2": fit.mediator.sigma2},
    }
    return {
        "config_echo": asdict(config),
        "fit_diagnostics": diag,
        "results": [
            {**asdict(r),
             "delta_ci": list(r.delta_ci) if r.delta_ci else None,
             "boot_ci": list(r.boot_ci) if r.boot_ci else None}
            for r in rows
        ],
    }


# -- atomic output ----------------------------------------------------------------------

def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temp file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# -- scenario files ---------------------------------------------------------------------

_SCENARIO_KEYS = {
    "id", "case", "n", "te", "mp", "outcome_prevalence", "mediator_prevalence",
    "xm_correlation", "error_skewness", "replications", "seed",
    "bootstrap_replications", "flavors", "covariance", "level",
}


def load_scenario(path, sweep=False):
    """Parse a TOML scenario file into ``(scenario, prevalences)``."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    allowed = _SCENARIO_KEYS | ({"prevalences"} if sweep else set())
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    for key in ("case", "n", "te", "mp"):
        if key not in doc:
            raise ConfigError(f"{key}: required")
    boot = None
    if "bootstrap_replications" in doc:
        try:
            boot = BootstrapConfig(int(doc["bootstrap_replications"]))
        except ValueError as exc:
            raise ConfigError(f"bootstrap_replications: {exc}") from None
    kwargs = dict(
        case=doc["case"], n=doc["n"], te_target=float(doc["te"]), mp_target=float(doc["mp"]),
        replications=doc.get("replications", 1000), seed=doc.get("seed", 0),
        baseline_outcome_prev=float(doc.get("outcome_prevalence", 0.03)),
        baseline_mediator_prev=float(doc.get("mediator_prevalence", 0.2)),
        xm_correlation=float(doc.get("xm_correlation", 0.2)),
        error_skewness=float(doc.get("error_skewness", 0.0)),
        bootstrap=boot, flavors=tuple(doc["flavors"]) if "flavors" in doc else None,
        covariance=doc.get("covariance", "sandwich"), level=float(doc.get("level", 0.95)),
        name=str(doc.get("id", os.path.splitext(os.path.basename(path))[0])),
    )
    if isinstance(kwargs["case"], bool) or not isinstance(kwargs["case"], int):
        raise ConfigError(f"case: must be an integer 1-4, got {kwargs['case']!r}")
    scenario = SimulationScenario(**kwargs)
    prevalences = None
    if sweep:
        prevalences = doc.get("prevalences")
        if not prevalences:
            raise ConfigError("prevalences: a non-empty list is required for a sweep")
        prevalences = [float(p) for p in prevalences]
    return scenario, prevalences


METRIC_COLUMNS = [
    "scenario_id", "case", "n", "te", "mp", "prevalence", "flavor", "measure",
    "bias_percent", "cr_delta", "cr_boot", "variance_ratio", "n_failed",
    "wall_seconds", "mean_cases", "status",
]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _base_row(scen: SimulationScenario, prevalence):
    return {
        "scenario_id": scen.name, "case": int(scen.case), "n": scen.n,
        "te": scen.te_target, "mp": scen.mp_target,
        "prevalence": prevalence if scen.case.y_binary else None,
    }


def metrics_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({k: _cell(rec.get(k)) for k in METRIC_COLUMNS})
    return buf.getvalue()


def simulate_records(scen, workers=1, timing=True):
    t0 = time.perf_counter()
    met = run_scenario(scen, workers)
    wall = time.perf_counter() - t0 if timing else None
    out = []
    for fl in scen.flavors:
        for name in SIM_MEASURES:
            c = met.cells[(fl.value, name)]
            out.append({
                **_base_row(scen, scen.baseline_outcome_prev), "flavor": fl.value,
                "measure": name, "bias_percent": c.bias_percent, "cr_delta": c.cr_delta,
                "cr_boot": c.cr_boot, "variance_ratio": c.variance_ratio,
                "n_failed": met.n_failed, "wall_seconds": wall,
                "mean_cases": met.mean_cases, "status": "ok",
            })
    return out


def sweep_records(scen, prevalences, workers=1, timing=True):
    t0 = time.perf_counter()
    rows = prevalence_sweep(scen, prevalences, scen.flavors, workers)
    wall = time.perf_counter() - t0 if timing else None
    out = []
    for row in rows:
        for name in SIM_MEASURES:
            c = row.cells.get(name)
            out.append({
                **_base_row(scen, row.prevalence), "flavor": row.flavor, "measure": name,
                "bias_percent": c and c.bias_percent, "cr_delta": c and c.cr_delta,
                "cr_boot": c and c.cr_boot, "variance_ratio": c and c.variance_ratio,
                "n_failed": row.n_failed, "wall_seconds": wall,
                "mean_cases": row.mean_cases,
                "status": "ok" if row.ok else f"failed: {row.error}",
            })
    return out


# -- entry point ------------------------------------------------------------------------------

def _csv_list(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _float_list(text):
    try:
        return [float(s) for s in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="prodmed", description="Product-method mediation analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate NIE, TE and MP from a CSV file")
    a.add_argument("--data", required=True, help="CSV file with a header row")
    a.add_argument("--outcome", required=True)
    a.add_argument("--mediator", required=True)
    a.add_argument("--exposure", required=True)
    a.add_argument("--binary-outcome", action="store_true")
    a.add_argument("--binary-mediator", action="store_true")
    a.add_argument("--covariates-outcome", type=_csv_list, default=[],
                   help="comma-separated column names")
    a.add_argument("--covariates-mediator", type=_csv_list, default=[],
                   help="comma-separated column names")
    a.add_argument("--x0", type=float, default=0.0, help="reference exposure level")
    a.add_argument("--x1", type=float, default=1.0, help="comparison exposure level")
    a.add_argument("--c-outcome", type=_float_list, default=None,
                   help="outcome covariate values (default zeros)")
    a.add_argument("--c-mediator", type=_float_list, default=None,
                   help="mediator covariate values (default zeros)")
    a.add_argument("--boot", action="store_true", help="add percentile bootstrap intervals")
    a.add_argument("--boot-r", type=int, default=2000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--flavor", choices=FLAVOR_CHOICES, default="both")
    a.add_argument("--level", type=float, default=0.95)
    a.add_argument("--covariance", choices=("sandwich", "model"), default="sandwich")
    a.add_argument("--json", metavar="PATH", help="also write a JSON document ('-' for stdout)")
    a.add_argument("--workers", type=int, default=1, help="processes for the bootstrap")

    for name, what in (("simulate", "run one Monte Carlo scenario"),
                       ("sweep", "run a scenario over baseline outcome prevalences")):
        s = sub.add_parser(name, help=what)
        s.add_argument("scenario", help="TOML scenario file")
        s.add_argument("--out", required=True, help="metrics CSV path")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--omit-timing", action="store_true",
                       help="leave wall_seconds empty so reruns are byte-identical")
    return p


def _exit_code(exc):
    if isinstance(exc, (InputError, OSError)):
        return EXIT_INPUT
    if isinstance(exc, BootstrapInstabilityError):
        return EXIT_BOOT
    if isinstance(exc, SolverFailureError):
        return EXIT_SOLVER
    return EXIT_FIT


def _run(args):
    if args.command == "analyze":
        cfg = AnalysisConfig(
            args.data, args.outcome, args.mediator, args.exposure,
            args.binary_outcome, args.binary_mediator,
            args.covariates_outcome, args.covariates_mediator,
            args.x0, args.x1, args.c_outcome, args.c_mediator,
            args.boot, args.boot_r, args.seed, args.flavor, args.level, args.covariance,
        )
        fit, rows = analyze(cfg, max(1, args.workers))
        table = render_table(rows, cfg.level, cfg.boot)
        if args.json == "-":
            sys.stdout.write(dump_json(result_document(cfg, fit, rows)))
        else:
            sys.stdout.write(table)
            if args.json:
                write_atomic(args.json, dump_json(result_document(cfg, fit, rows)))
        return 0

    sweep = args.command == "sweep"
    scen, prevalences = load_scenario(args.scenario, sweep)
    timing = not args.omit_timing
    if sweep:
        records = sweep_records(scen, prevalences, max(1, args.workers), timing)
    else:
        records = simulate_records(scen, max(1, args.workers), timing)
    write_atomic(args.out, metrics_csv(records))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except (MediationError, OSError) as exc:
        print(f"prodmed: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
