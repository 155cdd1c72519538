import csv
import os

import pytest

from hamtransport.errors import ConfigError
from hamtransport.harness import cli
from hamtransport.harness.config import build_scenario, parse_text
from hamtransport.harness.presets import PRESETS, list_presets, preset_config, preset_text
from hamtransport.harness.report import REPORT_COLUMNS, SUMMARY_COLUMNS

REQUIRED = ("flat-e1-quadratic", "flat-e1-trig", "cor2.3-sphere", "cor2.6-ricciflow-sphere", "cor2.7-perelman",
            "cor2.8-forward", "cor2.13-e8", "cor2.14-e8", "thm2.15-drift-flat", "bochner-sphere",
            "scaling-lemma7.2", "oracle-curvature-sweep")

WRONG_U = preset_text("cor2.6-ricciflow-sphere").replace("hamiltonian.U.expr = ricci",
                                                         "hamiltonian.U.expr = -0.9/(1 - 2*t)")

BASE = "name = a\nmetric.kind = flat\nhamiltonian.kind = kinetic\n"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("text,key", [
    ("name = a\nmetric.kin = flat\n", "metric.kin"),
    ("name = a\nname = b\n", "name"),
    (BASE + "f.expr = x1 +\n", "f.expr"),
    ("name = a\nhamiltonian.kind = kinetic\nmetric.kind = cube\nf.expr = x1\n", "metric.kind"),
    (BASE + "f.expr = x1\ndomain.lower = 0\ndomain.upper = 1, 1\ntheorems = thm2.2\n",
     "domain.lower"),
    (BASE + "f.expr = x1\ndomain.lower = 0, 0\ndomain.upper = 1, 1\ntheorems = thm9\n",
     "theorems"),
    (BASE + "f.expr = x1\ndomain.lower = 0, 0\ndomain.upper = 1, 1\n", "theorems"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        build_scenario(parse_text(text))
    assert err.value.context["key"] == key


def test_grid_bounds_are_enforced():
    cfg = preset_config("flat-e1-quadratic")
    with pytest.raises(ConfigError) as err:
        build_scenario(cfg, particles=1)
    assert err.value.context["key"] == "grid.particles"
    with pytest.raises(ConfigError) as err:
        build_scenario(cfg, steps=8)
    assert err.value.context["key"] == "time.steps"


def test_comments_and_blank_lines():
    cfg = parse_text("# header\n\nname = a   # trailing\nmode = oracle\n")
    assert cfg == {"name": "a", "mode": "oracle"}


def test_presets_cover_required_names():
    names = [n for n, _ in list_presets()]
    assert len(names) >= 12
    for name in REQUIRED:
        assert name in PRESETS
    for name in names:
        sc = build_scenario(preset_config(name))
        assert sc.name == name


def test_oracle_preset_has_no_transport():
    sc = build_scenario(preset_config("oracle-curvature-sweep"))
    assert sc.mode == "oracle"
    assert sc.H is None and sc.theorems == ()


def test_steps_are_per_unit_time():
    sc = build_scenario(preset_config("cor2.6-ricciflow-sphere"), steps=512)
    assert sc.steps == 103
    assert build_scenario(preset_config("flat-e1-quadratic"), steps=16).steps == 16


def test_cli_presets_and_describe(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "cor2.3-sphere" in out and "oracle-curvature-sweep" in out
    assert cli.main(["describe", "flat-e1-quadratic"]) == 0
    out = capsys.readouterr().out
    assert parse_text(out)["theorems"] == "thm2.2"
    assert cli.main(["describe", "nope"]) == 1


def test_cli_run_writes_reports(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", "flat-e1-quadratic", "--out", str(out), "--particles", "4", "--steps", "64",
                     "--plot-data"])
    assert code == 0
    rows = read_csv(out / "flat-e1-quadratic.csv")
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == 1 + 65
    assert rows[1][-1] == "EDGE" and rows[2][-1] == "PASS"
    assert rows[2][2] == "0.015625"
    # 17 significant digits round-trip exactly
    assert "%.17g" % float(rows[5][3]) == rows[5][3]
    summary = read_csv(out / "summary.csv")
    assert tuple(summary[0]) == SUMMARY_COLUMNS
    assert all(r[4] == "PASS" for r in summary[1:])
    assert (out / "flat-e1-quadratic__thm2.2.dat").exists()
    assert (out / "flat-e1-quadratic.diag.csv").exists()


def test_env_var_sets_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("HAMTRANSPORT_OUT", str(tmp_path / "env"))
    assert cli.main(["run", "bochner-flat", "--particles", "4"]) == 0
    assert (tmp_path / "env" / "bochner-flat.csv").exists()


def test_violated_identity_aborts_with_code_3(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(WRONG_U)
    code = cli.main(["run", str(path), "--out", str(tmp_path / "o"), "--particles", "3", "--steps", "64"])
    assert code == 3
    summary = read_csv(tmp_path / "o" / "summary.csv")
    assert any(r[4] == "ABORT" and "ConstraintViolation" in r[1] + r[5] for r in summary[1:])


def test_malformed_config_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("name = x\nmetric.kind = flat\nbogus = 1\n")
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "bogus" in capsys.readouterr().err
    assert cli.main(["run", "no-such-preset", "--out", str(tmp_path / "o")]) == 1


def test_failing_margin_exits_2(tmp_path, capsys):
    # an absurd tolerance can only be met by strictly positive margins
    code = cli.main(["run", "flat-e1-quadratic", "--out", str(tmp_path), "--particles", "4", "--steps", "64",
                     "--tol", "-10"])
    assert code == 2


def test_oracle_and_scaling_modes_run(tmp_path):
    results, code = cli.run_suite([preset_config("oracle-curvature-sweep"), preset_config("scaling-lemma7.2")],
                                  str(tmp_path), particles=3, steps=64)
    assert code == 0
    assert [c.scenario.split("#")[1] for c in results[0].checks] == ["flat_u", "sphere_u", "conformal",
                                                                      "shrinking", "drift_flat"]
    assert {c.check.split("@")[0] for c in results[1].checks} == {"reparametrization", "curvature_scaling"}
    assert os.path.exists(tmp_path / "oracle-curvature-sweep.csv")
