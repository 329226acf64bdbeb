import csv
import json
import math
import re

import numpy as np
import pytest

from prodmed.cli import AnalysisConfig, analyze, load_csv, main, render_table
from prodmed.exceptions import (
    ConfigError,
    MissingColumnError,
    MissingValueError,
    NonBinaryValueError,
    NonNumericCellError,
)
from prodmed.simulation import SimulationScenario, generate, solve_design

HEAD = """Y,M,X,C1,C2
0,1,1,0.53,0
1,0,0,-1.20,1
0,0,1,0.10,1
0,1,0,0.88,0
1,1,1,-0.35,1
0,0,0,1.02,0
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def cfg(path, **kw):
    base = dict(outcome="Y", mediator="M", exposure="X")
    base.update(kw)
    return AnalysisConfig(path, **base)


def dataset_csv(tmp_path, data, name="d.csv", extra=None):
    cols = {"Y": data.y, "M": data.m, "X": data.x, **(extra or {})}
    lines = [",".join(cols)]
    for i in range(data.n):
        lines.append(",".join(repr(float(cols[c][i])) for c in cols))
    return write(tmp_path, name, "\n".join(lines) + "\n")


# -- load_csv ---------------------------------------------------------------

def test_load_with_covariates(tmp_path):
    path = write(tmp_path, "head.csv", HEAD)
    data = load_csv(path, cfg(path, binary_outcome=True, binary_mediator=True,
                              covariates_outcome=["C1", "C2"]))
    assert data.n == 6 and data.p == 2


def test_empty_cell(tmp_path):
    path = write(tmp_path, "e.csv", HEAD.replace("0.10", ""))
    with pytest.raises(MissingValueError) as err:
        load_csv(path, cfg(path, covariates_outcome=["C1"]))
    assert err.value.row == 4 and err.value.col == "C1"


def test_non_binary(tmp_path):
    path = write(tmp_path, "b.csv", HEAD.replace("0,1,0,0.88", "0,2,0,0.88"))
    with pytest.raises(NonBinaryValueError) as err:
        load_csv(path, cfg(path, binary_mediator=True))
    assert err.value.row == 5 and err.value.col == "M"


def test_non_numeric_and_missing_column(tmp_path):
    path = write(tmp_path, "n.csv", HEAD.replace("-1.20", "abc"))
    with pytest.raises(NonNumericCellError):
        load_csv(path, cfg(path, covariates_outcome=["C1"]))
    with pytest.raises(MissingColumnError):
        load_csv(path, cfg(path, covariates_outcome=["C9"]))


def test_covariate_value_length_checked():
    with pytest.raises(ConfigError):
        AnalysisConfig("x.csv", "Y", "M", "X", covariates_outcome=["C1"], c_outcome=[1, 2])


# -- analyze ----------------------------------------------------------------

def case1_csv(tmp_path, n=400, seed=0):
    scen = SimulationScenario(1, n, 1.0, 0.5, seed=seed)
    return dataset_csv(tmp_path, generate(scen, solve_design(scen), 0))


def test_null_contrast(tmp_path):
    path = case1_csv(tmp_path)
    _, rows = analyze(cfg(path, x0=0.0, x1=0.0))
    assert [r.measure for r in rows] == ["NIE", "TE", "MP"]
    assert rows[0].point == 0 and rows[1].point == 0
    assert rows[2].undefined and rows[2].point is None
    assert "undefined" in render_table(rows)


def test_binary_both_gives_six_rows(tmp_path):
    scen = SimulationScenario(4, 3000, math.log(2), 0.5, baseline_outcome_prev=0.2, seed=1)
    path = dataset_csv(tmp_path, generate(scen, solve_design(scen), 0))
    _, rows = analyze(cfg(path, binary_outcome=True, binary_mediator=True))
    table = render_table(rows)
    labels = [line[:18].strip() for line in table.splitlines()[1:]]
    assert labels == ["NIE: Approximate", "NIE: Exact", "TE: Approximate", "TE: Exact",
                      "MP: Approximate", "MP: Exact"]


def test_case4_reanalysis_self_consistent(tmp_path):
    te, mp = math.log(1.5), 0.2
    scen = SimulationScenario(4, 20000, te, mp, seed=123)
    path = dataset_csv(tmp_path, generate(scen, solve_design(scen), 0))
    _, rows = analyze(cfg(path, binary_outcome=True, binary_mediator=True, flavor="exact"))
    truth = {"NIE": mp * te, "TE": te, "MP": mp}
    for r in rows:
        assert abs(r.point - truth[r.measure]) < 3 * r.se, r


def test_table_and_json_agree(tmp_path, capsys):
    path = case1_csv(tmp_path, seed=3)
    out = tmp_path / "r.json"
    rc = main(["analyze", "--data", path, "--outcome", "Y", "--mediator", "M",
               "--exposure", "X", "--boot", "--boot-r", "50", "--json", str(out)])
    assert rc == 0
    table = capsys.readouterr().out
    doc = json.loads(out.read_text())
    assert set(doc) == {"config_echo", "fit_diagnostics", "results"}
    assert doc["fit_diagnostics"]["n"] == 400
    expected = []
    for r in doc["results"]:
        expected += [r["point"], r["se"], *r["delta_ci"], *r["boot_ci"]]
    printed = [float(v) for v in re.findall(r"-?\d+\.\d{4}\b", table)]
    assert printed == [float(f"{v:.4f}") for v in expected]


# -- exit codes -------------------------------------------------------------

def test_exit_input_errors(tmp_path, capsys):
    path = write(tmp_path, "head.csv", HEAD)
    assert main(["analyze", "--data", path, "--outcome", "Y", "--mediator", "M",
                 "--exposure", "Q"]) == 2
    assert main(["analyze", "--data", str(tmp_path / "nope.csv"), "--outcome", "Y",
                 "--mediator", "M", "--exposure", "X"]) == 2
    assert main(["analyze", "--data", path, "--outcome", "Y", "--mediator", "M",
                 "--exposure", "X", "--flavor", "probit"]) == 2
    assert "error" in capsys.readouterr().err


def test_exit_fit_error(tmp_path):
    path = write(tmp_path, "c.csv", "Y,M,X\n" + "".join(f"0,{i % 3},{i % 2}\n" for i in range(20)))
    assert main(["analyze", "--data", path, "--outcome", "Y", "--mediator", "M",
                 "--exposure", "X", "--binary-outcome"]) == 3


def test_exit_bootstrap_instability(tmp_path):
    # three events in 40 records: the full fit converges, but many resamples
    # have no events or separate
    rng = np.random.default_rng(0)
    m = rng.normal(size=40)
    y = np.zeros(40)
    y[rng.choice(40, 3, replace=False)] = 1
    rows = [f"{y[i]:.0f},{float(m[i])!r},{i % 2}" for i in range(40)]
    path = write(tmp_path, "r.csv", "Y,M,X\n" + "\n".join(rows) + "\n")
    assert main(["analyze", "--data", path, "--outcome", "Y", "--mediator", "M",
                 "--exposure", "X", "--binary-outcome", "--boot", "--boot-r", "100"]) == 4


def test_simulate_config_and_solver_errors(tmp_path, capsys):
    bad = write(tmp_path, "bad.toml", "case = 1\nn = 100\nte = 1.0\nmp = 1.5\n")
    out = tmp_path / "o.csv"
    assert main(["simulate", bad, "--out", str(out)]) == 2
    assert "mp" in capsys.readouterr().err
    unknown = write(tmp_path, "u.toml", "case = 1\nn = 100\nte = 1.0\nmp = 0.5\ncolour = 1\n")
    assert main(["simulate", unknown, "--out", str(out)]) == 2
    solver = write(tmp_path, "s.toml",
                   "case = 3\nn = 100\nte = 1.0\nmp = 0.5\nxm_correlation = 0.0\n")
    assert main(["simulate", solver, "--out", str(out)]) == 5
    assert not out.exists()


# -- simulate and sweep -----------------------------------------------------

SCENARIO = """id = "c4-small"
case = 4
n = 1500
te = 0.6931471805599453
mp = 0.5
outcome_prevalence = 0.2
replications = 8
seed = 17
bootstrap_replications = 10
"""


def test_simulate_byte_identical_across_workers(tmp_path):
    path = write(tmp_path, "s.toml", SCENARIO)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", path, "--out", str(a), "--omit-timing"]) == 0
    assert main(["simulate", path, "--out", str(b), "--omit-timing", "--workers", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(a.open()))
    assert [(r["flavor"], r["measure"]) for r in rows] == [
        ("exact", "nie"), ("exact", "mp"), ("approximate", "nie"), ("approximate", "mp")]
    assert rows[0]["scenario_id"] == "c4-small" and rows[0]["wall_seconds"] == ""
    assert rows[0]["cr_boot"] != ""


def test_simulate_single_replication(tmp_path):
    path = write(tmp_path, "one.toml", "case = 1\nn = 200\nte = 1.0\nmp = 0.5\nreplications = 1\n")
    out = tmp_path / "one.csv"
    assert main(["simulate", path, "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert rows[0]["cr_delta"] in ("0.0", "1.0")
    assert float(rows[0]["wall_seconds"]) >= 0


def test_sweep_grid_shape(tmp_path):
    text = ("case = 4\nn = 1500\nte = 0.6931471805599453\nmp = 0.5\nreplications = 3\n"
            "seed = 2\nprevalences = [0.01, 0.05, 0.10, 0.25, 0.50]\n")
    path = write(tmp_path, "sw.toml", text)
    out = tmp_path / "sw.csv"
    assert main(["sweep", path, "--out", str(out), "--omit-timing"]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 5 * 2 * 2
    assert [r["flavor"] for r in rows[:4]] == ["exact", "exact", "approximate", "approximate"]
    assert rows[0]["prevalence"] == "0.01"


def test_sweep_case3_three_flavors(tmp_path):
    text = ("case = 3\nn = 1500\nte = 0.6931471805599453\nmp = 0.5\nreplications = 2\n"
            "prevalences = [0.1]\n")
    path = write(tmp_path, "sw3.toml", text)
    out = tmp_path / "sw3.csv"
    assert main(["sweep", path, "--out", str(out)]) == 0
    assert {r["flavor"] for r in csv.DictReader(out.open())} == {"exact", "approximate", "probit"}


def test_sweep_needs_prevalences(tmp_path):
    path = write(tmp_path, "np.toml", "case = 4\nn = 100\nte = 0.5\nmp = 0.5\n")
    assert main(["sweep", path, "--out", str(tmp_path / "x.csv")]) == 2
