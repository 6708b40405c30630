import json
from pathlib import Path

import pytest

from gaussloc import cli
from gaussloc import operator as opm
from gaussloc.config import CATALOG, KINDS, ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MSA_CHECK = """
kind = "msa-check"
seed = 0
output = "{out}"
[geometry]
d = 1
N = 4
S = 2
nu = 1.0146604938271604
r = 4.30111644566377
rho = 0.3055555555555556
theta = 0.8410493827160493
w = 0.6397004595075289
delta = 10.0
zeta = 8.5
L0 = 1.0284403483257538e62
"""

FIELD = """
kind = "field-validate"
seed = 4
output = "{out}"
trials = 40
[covariance]
type = "gaussian"
d = 1
corr_length = 1.0
[grid]
h = 0.1
points = 64
[solver]
rtol = 1e-9
"""


def _write(tmp_path, text, name="c.toml", out="run"):
    p = tmp_path / name
    p.write_text(text.format(out=(tmp_path / out).as_posix()))
    return p


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert cfg.kind == path.stem


def test_one_config_per_kind():
    assert sorted(p.stem for p in CONFIGS.glob("*.toml")) == sorted(KINDS)


def test_list_is_sorted_catalog(capsys):
    items = cli.list_experiments()
    assert [e["kind"] for e in items] == sorted(CATALOG)
    assert all(e["doc"] and e["anchor"] and e["required"] for e in items)
    assert cli.main(["list"]) == 0
    assert "msa-check" in capsys.readouterr().out


@pytest.mark.parametrize("raw, path", [
    ({"seed": 1, "output": "x"}, "kind"),
    ({"kind": "nope", "seed": 1, "output": "x"}, "kind"),
    ({"kind": "msa-check", "output": "x"}, "seed"),
    ({"kind": "combes-thomas", "seed": 1, "output": "x", "params": {}}, "params.cases"),
    ({"kind": "combes-thomas", "seed": 1, "output": "x", "params": {"cases": 2}, "grid": {"h": -1}}, "grid.h"),
    ({"kind": "combes-thomas", "seed": 1, "output": "x", "params": {"cases": 2}, "bogus": 1}, "bogus"),
    ({"kind": "field-validate", "seed": 1, "output": "x", "trials": 5, "grid": {"h": 0.1, "points": 8},
      "covariance": {"type": "gaussian", "d": 1, "radius": 1.0}}, "covariance.radius"),
    ({"kind": "msa-check", "seed": 1, "output": "x",
      "geometry": {"d": 1, "N": 4, "S": 2, "delta": 10.0, "zeta": 8.5}}, "geometry.nu"),
])
def test_schema_errors_name_the_field(raw, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    assert exc.value.path == path


def test_validate_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, MSA_CHECK)
    assert cli.main(["validate", str(good)]) == 0
    bad = tmp_path / "bad.toml"
    bad.write_text('kind = "wegner"\nseed = 1\noutput = "o"\n')
    assert cli.main(["validate", str(bad)]) == 2
    assert "covariance" in capsys.readouterr().err
    syntax = tmp_path / "syntax.toml"
    syntax.write_text("kind = \n")
    assert cli.main(["run", str(syntax)]) == 2


def test_msa_check_run_outputs(tmp_path):
    cfg = _write(tmp_path, MSA_CHECK)
    assert cli.main(["run", str(cfg)]) == 0
    out = tmp_path / "run"
    res = json.loads((out / "results.json").read_text())
    assert res["results"]["feasible"] is True
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["seed"] == 0
    assert set(man["files"]) == {"results.json"}
    assert man["config_digest"] == load_config(cfg).digest()


def test_runs_are_deterministic_and_restore_solver_tolerance(tmp_path):
    a = _write(tmp_path, FIELD, "a.toml", "a")
    b = _write(tmp_path, FIELD, "b.toml", "b")
    assert cli.main(["run", str(a)]) == 0
    assert cli.main(["run", str(b)]) == 0
    for name in ("results.json", "covariance_empirical.dat", "covariance_exact.dat", "plot.gp"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["tolerances"]["solver_rtol"] == 1e-9
    assert opm.SOLVE_RTOL == 1e-10


def test_output_dir_of_other_config_is_refused(tmp_path):
    a = _write(tmp_path, FIELD, "a.toml", "shared")
    assert cli.main(["run", str(a)]) == 0
    assert cli.main(["run", str(a)]) == 0  # same config may rerun
    b = _write(tmp_path, MSA_CHECK, "b.toml", "shared")
    assert cli.main(["run", str(b)]) == 2


def test_module_failure_exit_3_keeps_partial_results(tmp_path, capsys):
    text = """
kind = "localize"
seed = 1
output = "{out}"
trials = 1
[covariance]
type = "gaussian"
d = 1
[grid]
h = 0.2
sizes = [20]
[energies]
values = [-3.0]
[params]
beta = 2.0
"""
    cfg = _write(tmp_path, text)
    assert cli.main(["run", str(cfg)]) == 3
    out = tmp_path / "run"
    marker = (out / "FAILED").read_text()
    assert marker.startswith("module: msa")
    assert "MsaError" in marker
    assert (out / "results.partial.json").exists()
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"
    assert "FAILED in module msa" in capsys.readouterr().err


def test_msa_probe_writes_probe_log(tmp_path):
    text = """
kind = "msa-probe"
seed = 2
output = "{out}"
trials = 30
[covariance]
type = "gaussian"
d = 1
[geometry]
N = 4
nu = 1.1
r = 4.0
L = 30.0
[grid]
h = 0.1
[energies]
values = [-6.0]
"""
    cfg = _write(tmp_path, text)
    assert cli.main(["run", str(cfg)]) == 0
    lines = (tmp_path / "run" / "probes.jsonl").read_text().splitlines()
    assert len(lines) == 30
    assert all(json.loads(s)["event"] == "regular" for s in lines)
