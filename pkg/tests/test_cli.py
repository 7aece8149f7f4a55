import json
from pathlib import Path

import pytest

from bpsa.cli import run_cli
from bpsa.config import parse_scenario
from bpsa.errors import ConfigError, LawContractError
from bpsa.offspring import BPALaw, IndependentLaw, ProportionLaw

STAB_CFG = """
[law]
family = proportion
base = poisson
xx = 1.8 -0.6 0   # const coef_c coef_a
xy = 0
yx = 0
yy = 1.2 0.6

[run]
lambda = 1
cx0 = 5
cy0 = 5
horizon_epochs = 3000
replications = 8
base_seed = 1
"""

TINY_CFG = """
[law]
family = bpa
own_x = const 1
own_y = const 1
attack_xy = pmf 0:0.5 1:0.5
attack_yx = const 0

[run]
lambda = 1
cx0 = 1
cy0 = 1
horizon_epochs = 10
"""

INDEP_CFG = """
[law]
family = independent
x = poisson 1.5
y = geometric 0.9

[run]
lambda = 2.5
cx0 = 2
cy0 = 3
horizon_epochs = 500
"""

PMF_CFG = """
[law]
family = proportion
base = pmf
xx = 1.8 -0.6
xy = 0
yx = 0
yy = 1.2 0.6
dom_xx = pmf 0:0.1 2:0.9
dom_yy = pmf 0:0.1 2:0.9

[run]
lambda = 1
cx0 = 2
cy0 = 1
horizon_epochs = 500
"""


@pytest.fixture
def cfg(tmp_path):
    def write(text, name="s.cfg"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def test_parse_families():
    assert isinstance(parse_scenario(STAB_CFG).config.law_object, ProportionLaw)
    assert isinstance(parse_scenario(TINY_CFG).config.law_object, BPALaw)
    scn = parse_scenario(INDEP_CFG)
    assert isinstance(scn.config.law_object, IndependentLaw)
    assert scn.config.lam == 2.5 and scn.config.replications == 1
    assert parse_scenario(PMF_CFG).config.law_object.base == "pmf"


def test_canonical_text_roundtrip_and_hash():
    for text in (STAB_CFG, TINY_CFG, INDEP_CFG, PMF_CFG):
        scn = parse_scenario(text)
        again = parse_scenario(scn.canonical_text())
        assert again.canonical_text() == scn.canonical_text()
        assert again.hash8 == scn.hash8 and len(scn.hash8) == 8
    a = parse_scenario(STAB_CFG)
    assert a.with_overrides(seed=9).hash8 == a.hash8
    assert a.with_overrides(horizon=10).hash8 != a.hash8


@pytest.mark.parametrize("mutation", [
    lambda t: t.replace("family = proportion", "family = other"),
    lambda t: t.replace("xx = 1.8 -0.6 0", "xx = 1.8 -0.6 0 4"),
    lambda t: t.replace("lambda = 1", "lambda = -1"),
    lambda t: t.replace("cx0 = 5", "cx0 = five"),
    lambda t: t.replace("base_seed = 1", "base_seed = 1\ncolor = red"),
    lambda t: t.replace("horizon_epochs = 3000\n", ""),
    lambda t: t.replace("[run]", "[walk]"),
])
def test_config_errors(mutation):
    with pytest.raises(ConfigError):
        parse_scenario(mutation(STAB_CFG))


def test_invalid_law_is_contract_violation(cfg, tmp_path):
    text = STAB_CFG.replace("xx = 1.8 -0.6 0", "xx = -1.0 0.5")
    with pytest.raises(LawContractError):
        parse_scenario(text)
    assert run_cli(["simulate", "--config", cfg(text), "--out", str(tmp_path)]) == 3


def test_simulate_is_byte_identical(cfg, tmp_path):
    path = cfg(STAB_CFG)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(["simulate", "--config", path, "--out", str(a), "--seed", "7"]) == 0
    assert run_cli(["simulate", "--config", path, "--out", str(b), "--seed", "7"]) == 0
    csvs = [p.name for p in a.glob("*.csv")]
    assert len(csvs) == 1 and csvs[0].startswith("simulate-") and csvs[0].endswith("-7.csv")
    assert (a / csvs[0]).read_bytes() == (b / csvs[0]).read_bytes()
    manifest = json.loads(next(a.glob("*.manifest.json")).read_text())
    assert manifest["subcommand"] == "simulate" and manifest["seed"] == 7
    for name in manifest["outputs"]:
        assert (a / name).stat().st_size > 0


def test_compare_windows(cfg, tmp_path):
    path = cfg(STAB_CFG)
    args = ["compare", "--config", path, "--out", str(tmp_path), "--schedule", "100,200,400,800",
            "--T", "2", "--horizon", "10000"]
    assert run_cli(args) == 0
    report = json.loads(next(tmp_path.glob("compare-*-1.json")).read_text())
    assert len(report["windows"]) == 4


def test_oracle_check_exit(cfg, tmp_path):
    assert run_cli(["oracle-check", "--config", cfg(TINY_CFG), "--out", str(tmp_path),
                    "--draws", "100000"]) == 0
    report = json.loads(next(tmp_path.glob("oracle-check-*-0.json")).read_text())
    assert report["passed"]
    assert run_cli(["oracle-check", "--config", cfg(STAB_CFG, "p.cfg"), "--out",
                    str(tmp_path)]) == 2


@pytest.mark.parametrize("text", [STAB_CFG, TINY_CFG, INDEP_CFG, PMF_CFG],
                         ids=["proportion", "bpa", "independent", "proportion-pmf"])
def test_schema_consistency(cfg, tmp_path, text):
    path = cfg(text)
    out = str(tmp_path)
    # the deterministic BPA law has P(G_xx = 0) = 0, so it is accepted but fails the check
    assert run_cli(["validate-law", "--config", path, "--out", out]) in (0, 3)
    common = ["--config", path, "--out", out, "--horizon", "2000", "--reps", "4"]
    assert run_cli(["simulate", *common]) == 0
    assert run_cli(["ensemble", *common, "--parallelism", "2"]) == 0
    assert run_cli(["ode", *common, "--T", "2", "--step", "0.01"]) == 0
    assert run_cli(["compare", *common, "--schedule", "10,20", "--T", "1"]) == 0
    law = parse_scenario(text).config.law_object
    assert run_cli(["fixed-points", *common]) == (0 if law.autonomous else 2)


def test_ensemble_parallel_outputs_identical(cfg, tmp_path):
    path = cfg(STAB_CFG)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(["ensemble", "--config", path, "--out", str(a), "--parallelism", "1"]) == 0
    assert run_cli(["ensemble", "--config", path, "--out", str(b), "--parallelism", "3"]) == 0
    for suffix in (".csv", ".json"):
        pa = [p for p in a.iterdir() if p.suffix == suffix and "manifest" not in p.name]
        for p in pa:
            assert p.read_bytes() == (b / p.name).read_bytes()


def test_usage_errors(cfg, tmp_path, capsys):
    assert run_cli(["bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert run_cli(["simulate", "--config", cfg(STAB_CFG), "--frobnicate"]) == 2
    assert run_cli(["simulate"]) == 2
    assert run_cli(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_resource_guard_exit(cfg, tmp_path):
    text = INDEP_CFG.replace("x = poisson 1.5", "x = poisson 3").replace(
        "y = geometric 0.9", "y = poisson 3").replace(
        "horizon_epochs = 500", "horizon_epochs = 100000000\nmax_wall_seconds = 0.2")
    assert run_cli(["simulate", "--config", cfg(text), "--out", str(tmp_path)]) == 4
    assert not list(tmp_path.glob("*.manifest.json"))
