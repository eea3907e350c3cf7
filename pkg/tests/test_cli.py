import csv
import json

import pytest
import yaml

from odenet_uap import ConfigError, io
from odenet_uap.cli import RunConfig, config_from_dict, load_config, main, run_averaging

ZERO = {
    "target": {"field": "zero", "params": {"n": 2}},
    "domain": {"lower": [-1.0, -1.0], "upper": [1.0, 1.0], "samples_per_axis": 3},
    "epsilon": 0.1,
    "resnet": {"depth": 8, "depths": [4, 8]},
}


def write_cfg(path, d):
    path.write_text(yaml.safe_dump(d))
    return str(path)


@pytest.mark.parametrize("bad", [
    {"epsilon": 0.0},
    {"horizon": -1.0},
    {"bogus": 1},
    {"fit": {"width": 3}},
    {"target": {"field": "nope"}},
    {"target": {"controls": "missing.json"}},
    {"target": {"field": "zero", "controls": "x.json"}},
    {"domain": {"lower": [1.0], "upper": [0.0]}},
    {"averaging": {"speed": 2}},
])
def test_bad_configs_rejected(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_defaults_and_overrides(tmp_path):
    cfg = load_config(write_cfg(tmp_path / "c.yaml", {"seed": 3}), seed=9, out=str(tmp_path / "o"))
    assert cfg.seed == 9 and cfg.fit.seed == 9
    assert cfg.output_dir == str(tmp_path / "o")
    assert isinstance(load_config(), RunConfig)


def test_fit_zero_field_end_to_end(tmp_path, capsys):
    cfgp = write_cfg(tmp_path / "z.yaml", ZERO)
    assert main(["fit", "--config", cfgp, "--out", str(tmp_path / "a")]) == 0
    out = tmp_path / "a"
    rep = json.loads((out / "report.json").read_text())
    io.validate_report(rep)
    assert rep["success"] and rep["total_measured"]["flow"] == 0.0
    assert [s["name"] for s in rep["stages"]] == ["slice", "multiplex", "mollify"]
    for name in ("controls.json", "controls_piecewise.json", "resnet.json", "stages.csv"):
        assert (out / name).is_file()
    rows = list(csv.reader((out / "stages.csv").open()))
    assert rows[0] == ["stage", "t", "error"]
    # the smoothed controls feed the resnet command
    assert main(["resnet", "--config", cfgp, "--controls", str(out / "controls.json"),
                 "--out", str(tmp_path / "r")]) == 0


def test_reports_identical_across_runs(tmp_path):
    cfgp = write_cfg(tmp_path / "z.yaml", ZERO)
    main(["fit", "--config", cfgp, "--out", str(tmp_path / "a"), "--seed", "4"])
    main(["fit", "--config", cfgp, "--out", str(tmp_path / "b"), "--seed", "4"])
    a = io.strip_volatile(io.read_report(tmp_path / "a" / "report.json"))
    b = io.strip_volatile(io.read_report(tmp_path / "b" / "report.json"))
    assert a == b
    main(["fit", "--config", cfgp, "--out", str(tmp_path / "c"), "--seed", "5"])
    c = io.read_report(tmp_path / "c" / "report.json")
    assert c["provenance"]["config_hash"] != a["provenance"]["config_hash"]


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["fit", "--config", str(tmp_path / "none.yaml")]) == 2
    assert "config error" in capsys.readouterr().err


def test_average_command(tmp_path):
    cfgp = write_cfg(tmp_path / "a.yaml", {"averaging": {"family": "sign_alternation", "m_list": [4, 8, 16]}})
    assert main(["average", "--config", cfgp, "--out", str(tmp_path / "o")]) == 1     # 1/32 > 1e-2 bound
    rows = list(csv.reader((tmp_path / "o" / "averaging.csv").open()))
    assert rows == [["m", "distance"], ["4", "0.125"], ["8", "0.0625"], ["16", "0.03125"]]


def test_run_averaging_constant_family(tmp_path):
    res = run_averaging("constant", [4, 8, 16], tmp_path / "c.csv")
    assert res["distance"] == [0.0, 0.0, 0.0]
    with pytest.raises(ConfigError):
        run_averaging("unknown", [4], tmp_path / "x.csv")


def test_verify_and_simulate(tmp_path):
    cfgp = write_cfg(tmp_path / "v.yaml", dict(ZERO, verify={"cases": 3}))
    assert main(["verify", "--config", cfgp, "--out", str(tmp_path / "v")]) == 0
    rep = io.read_report(tmp_path / "v" / "report.json")
    assert len(rep["bound_reports"]) == 18 and all(r["holds"] for r in rep["bound_reports"])
    assert main(["simulate", "--config", cfgp, "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "trajectories.csv").read_text().startswith("point,t,x0,x1\n")


def test_target_from_control_file(tmp_path):
    cfgp = write_cfg(tmp_path / "z.yaml", ZERO)
    main(["fit", "--config", cfgp, "--out", str(tmp_path / "a")])
    d = dict(ZERO, target={"controls": "a/controls_piecewise.json"})
    cfg = load_config(write_cfg(tmp_path / "t.yaml", d))
    f = cfg.build_target()
    assert f.dimension == 2 and f.controls is not None
