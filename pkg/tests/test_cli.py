import json
import math

import jsonschema
import pytest

from lipriors.cli import REPORT_SCHEMA, RunReport, main, parse_grid, parse_targets

IG23_TARGETS = "1 -0.675828\n2 -0.666667\n"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def report(capsys, *argv):
    code, out, _ = run(capsys, *argv, "--json")
    assert code == 0
    data = json.loads(out)
    jsonschema.validate(data, REPORT_SCHEMA)
    return data


@pytest.fixture
def targets(tmp_path):
    p = tmp_path / "targets.txt"
    p.write_text(IG23_TARGETS)
    return str(p)


def test_induce_exponential(capsys):
    code, out, err = run(capsys, "induce", "exponential")
    assert code == 0
    assert "1: -log(theta)" in out and "2: -1/theta" in out
    assert "theta^-1" in out
    assert "family: inverse-gamma (matched)" in out
    assert "improper" in err


def test_induce_poisson_report(capsys):
    rep = report(capsys, "induce", "poisson")
    assert rep["outputs"]["laws"] == ["-theta", "log(theta)"]
    assert "theta^-0.5" in rep["outputs"]["base_measure"]
    assert rep["outputs"]["family"] == "gamma (matched)"
    assert rep["warnings"]


def test_induce_pseudo_obs(capsys):
    rep = report(capsys, "induce", "exponential", "--pseudo-obs", "1,2,3")
    assert rep["outputs"]["statistic_means"] == [1.0, 2.0]


def test_fisher_values(capsys):
    code, out, _ = run(capsys, "fisher", "exponential", "--theta", "2")
    assert code == 0 and float(out) == pytest.approx(0.25, rel=1e-10)
    rep = report(capsys, "fisher", "bernoulli", "--theta", "0.5")
    assert rep["outputs"]["fisher"][0][0] == pytest.approx(4.0, rel=1e-12)


def test_jeffreys_grid_is_symmetric(capsys):
    code, out, _ = run(capsys, "jeffreys", "bernoulli", "--grid", "0.1:0.9:9")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "theta,sqrt_det_I"
    rows = [tuple(map(float, l.split(","))) for l in lines[1:]]
    assert len(rows) == 9
    for (t, v), (s, w) in zip(rows, reversed(rows)):
        assert t + s == pytest.approx(1.0)
        assert v == pytest.approx(w, rel=1e-9)
        assert v == pytest.approx(1 / math.sqrt(t * (1 - t)), rel=1e-9)


def test_maxent_round_trip(capsys, targets):
    rep = report(capsys, "maxent", "exponential", "--targets", targets)
    o = rep["outputs"]
    assert o["residual"] <= 1e-8
    assert o["family"].startswith("inverse-gamma")
    assert o["multipliers"] == pytest.approx([-2.0, -3.0], rel=1e-4)


def test_sample_is_byte_identical(capsys):
    argv = ("sample", "exponential", "--hyper", "inverse-gamma:3,3", "-n", "10", "--seed", "7")
    _, first, _ = run(capsys, *argv)
    _, second, _ = run(capsys, *argv)
    assert first == second
    draws = [float(v) for v in first.split()]
    assert len(draws) == 10 and all(v > 0 for v in draws)
    _, other, _ = run(capsys, *argv[:-1], "8")
    assert other != first


def test_verify_exponential(capsys):
    rep = report(capsys, "verify", "exponential")
    assert rep["outputs"]["passed"]
    assert rep["outputs"]["max_closure_error"] <= 1e-6
    assert rep["outputs"]["match_error"] <= 1e-8


def test_verify_by_law_span(capsys):
    # no catalog entry by file name: the family is found from the law set
    rep = report(capsys, "verify", "bernoulli_counts")
    assert rep["outputs"]["family"].startswith("beta")


def test_report_round_trip(capsys):
    rep = report(capsys, "fisher", "poisson", "--theta", "3")
    back = RunReport.from_json(json.dumps(rep))
    assert json.loads(back.to_json()) == rep


# --- exit codes -----------------------------------------------------------------

def test_exit_1_syntax_error(capsys, tmp_path):
    bad = tmp_path / "bad.model"
    bad.write_text('model "b"\nparam theta in (0, 1)\nobs x in {0, 1} discrete\nlogpdf = x*log(theta\n')
    code, _, err = run(capsys, "induce", str(bad))
    assert code == 1 and "line 4" in err


@pytest.mark.parametrize("argv", [
    ("bogus", "exponential"),
    ("fisher", "exponential"),
    ("fisher", "exponential", "--theta", "-1"),
    ("jeffreys", "bernoulli", "--grid", "0:1"),
    ("induce", "no-such-model"),
    ("induce", "normal_mean_scale"),
])
def test_exit_1_usage(capsys, argv):
    assert run(capsys, *argv)[0] == 1


def test_exit_2_not_separable(capsys):
    code, _, err = run(capsys, "induce", "lomax")
    assert code == 2 and "rewrite" in err


def test_exit_3_infeasible_targets(capsys, tmp_path):
    # E[-1/theta] must be negative, so no multipliers reach +5
    p = tmp_path / "t.txt"
    p.write_text("1 -0.675828\n2 5\n")
    assert run(capsys, "maxent", "exponential", "--targets", str(p))[0] == 3


def test_exit_3_failed_verification(capsys):
    assert run(capsys, "verify", "exponential", "--tol", "1e-30")[0] == 3


def test_exit_4_improper(capsys):
    code, _, err = run(capsys, "sample", "exponential", "--lambda", "2,-3", "-n", "3")
    assert code == 4 and "not normalizable" in err


# --- parsers --------------------------------------------------------------------

def test_parse_targets():
    assert parse_targets("2 0.5\n# comment\n1 -1\n", 2).tolist() == [-1.0, 0.5]
    for bad in ("1 0.5\n", "0 1\n1 2\n", "1 2\n1 3\n2 1\n", "1 x\n2 1\n"):
        with pytest.raises(Exception):
            parse_targets(bad, 2)


def test_parse_grid():
    assert parse_grid("0.1:0.9:9").tolist() == pytest.approx([0.1 * k for k in range(1, 10)])
