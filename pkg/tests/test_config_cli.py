import json

import pytest

from lefschetz_lattice.cli import build_parser, main
from lefschetz_lattice.config import ConfigError, build_scenario, bundled_scenarios, load_scenario


def test_bundled_scenarios_load_and_build():
    ids = bundled_scenarios()
    assert {"reflection-r1", "translation-r1", "mass-gapped", "commutator-reference"} <= set(ids)
    for sid in ids:
        sc = build_scenario(sid)
        assert sc.id == sid and sc.t_grid.size > 0


def test_defaults_are_filled():
    cfg = load_scenario({"id": "x", "geometry": {"kind": "box", "half_width": 2.0}})
    assert cfg["tolerances"]["agreement_tol"] == 0.01
    assert cfg["exhaustion"]["rule"] == "first"


@pytest.mark.parametrize("bad", [
    {"geometry": {"kind": "sphere"}},
    {"geometry": {"kind": "box"}},
    {"geometry": {"kind": "torus"}},
    {"geometry": {"kind": "box", "half_width": 1.0, "h": 0.0}},
    {"geometry": {"kind": "box", "half_width": 1.0}, "grids": {"t2": []}},
    {"geometry": {"kind": "box", "half_width": 1.0}, "exhaustion": {"rule": "median"}},
    {"geometry": {"kind": "box", "half_width": 1.0}, "extra": {}},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        load_scenario(bad)


def test_missing_scenario():
    with pytest.raises(ConfigError):
        load_scenario("definitely-missing")


def test_toml_file_roundtrip(tmp_path):
    p = tmp_path / "mine.toml"
    p.write_text('[geometry]\nkind = "torus"\ndim = 1\ncircumference = 2.0\nh = 0.125\n'
                 '[isometry]\nO = [[1.0]]\nlift = "builtin:identity"\n'
                 '[operator]\nbundle = "spinor"\nscheme = "central"\n'
                 '[exhaustion]\nfamily = "full"\nj_max = 2\n[grids]\nt2 = [0.4, 0.25]\n')
    cfg = load_scenario(p)
    assert cfg["id"] == "mine"
    assert build_scenario(cfg).model.n_sites == 16


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_cli_index_verify_writes_outputs(tmp_path, capsys):
    code = main(["--out", str(tmp_path), "index-verify", "reflection-r1"])
    assert code == 0
    summary = json.loads((tmp_path / "reflection-r1-index-verify-summary.json").read_text())
    assert summary["passed"] is True and summary["verdicts"]["b"] is True
    assert (tmp_path / "reflection-r1-index-verify-analytic.csv").read_text().startswith("t,j,")
    assert "PASS" in capsys.readouterr().out


def test_cli_csv_summary(tmp_path):
    code = main(["--out", str(tmp_path), "--csv", "exhaustion-check", "reflection-r1", "--r", "0.5"])
    assert code == 0
    text = (tmp_path / "reflection-r1-exhaustion-check-summary.csv").read_text()
    assert "nested" in text
    stages = (tmp_path / "reflection-r1-exhaustion-check-stages.csv").read_text()
    assert "u_ratio_r0.5" in stages.splitlines()[0]


def test_cli_scenario_run_dispatches_commutator(tmp_path):
    code = main(["--out", str(tmp_path), "scenario", "run", "commutator-reference"])
    assert code == 0
    assert (tmp_path / "commutator-reference-commutator-test-regions.csv").exists()


def test_cli_errors_exit_2(tmp_path):
    assert main(["--out", str(tmp_path), "commutator-test", "reflection-r1"]) == 2
    assert main(["--out", str(tmp_path), "index-verify", "missing-scenario"]) == 2


def test_cli_heat_trace(tmp_path):
    code = main(["--out", str(tmp_path), "heat-trace", "torus-identity"])
    assert code == 0
    assert (tmp_path / "torus-identity-heat-trace-stages.csv").exists()


def test_cli_scenario_list(capsys):
    assert main(["scenario", "list"]) == 0
    assert "reflection-r1" in capsys.readouterr().out
