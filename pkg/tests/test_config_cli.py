from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest

from jumpcatch.cli import main
from jumpcatch.config import (ConfigError, RunConfig, config_hash, dump_params, load_params,
                              parse_params)

PARAMS = Path(__file__).resolve().parent.parent / "params"


def _flat(obj, prefix=""):
    """Numeric leaves of nested dataclasses and dicts."""
    out = {}
    items = (dataclasses.asdict(obj) if dataclasses.is_dataclass(obj) else obj).items()
    for k, v in items:
        key = f"{prefix}{k}"
        if dataclasses.is_dataclass(v):
            v = dataclasses.asdict(v)
        if isinstance(v, dict):
            out.update(_flat(v, key + "."))
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            out[key] = float(v)
        else:
            out[key] = v
    return out


@pytest.mark.parametrize("name", ["simulation.ini", "measured.ini", "ideal.ini"])
def test_round_trip(name):
    p = load_params(PARAMS / name)
    q = parse_params(dump_params(p))
    a = _flat(dict(atom=p.atom, cavity=p.cavity or {}, controller=p.controller))
    b = _flat(dict(atom=q.atom, cavity=q.cavity or {}, controller=q.controller))
    assert a.keys() == b.keys()
    for k in a:
        if isinstance(a[k], float):
            assert b[k] == pytest.approx(a[k], rel=1e-12, abs=1e-300), k
        else:
            assert a[k] == b[k], k
    assert p.model == q.model


def test_mhz_conversion():
    p = load_params(PARAMS / "simulation.ini")
    assert p.cavity.chi_B == pytest.approx(2 * math.pi * -5.08, rel=1e-15)
    assert p.cavity.T_int == 0.26


def test_overrides_and_errors():
    text = (PARAMS / "simulation.ini").read_text()
    p = parse_params(text, ["cavity.eta=0.5", "controller.N_on=3"])
    assert p.cavity.eta == 0.5 and p.controller["N_on"] == 3
    with pytest.raises(ConfigError, match="section.key=value"):
        parse_params(text, ["eta=0.5"])
    with pytest.raises(ConfigError, match="kappa_MHz"):
        parse_params(text.replace("kappa_MHz = 3.62", ""))
    with pytest.raises(ConfigError, match="unknown section"):
        parse_params(text + "\n[extra]\nx = 1\n")
    with pytest.raises(ConfigError):
        parse_params(text, ["cavity.eta=1.5"])
    with pytest.raises(ConfigError):
        load_params(PARAMS / "missing.ini")


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig("dance")
    with pytest.raises(ConfigError):
        RunConfig("toy", n_traj=0)
    with pytest.raises(ConfigError):
        RunConfig("toy", seed=-1)
    with pytest.raises(ConfigError):
        RunConfig("toy", dt_ns=0.0)


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*map(str, args), "-o", str(out)])
    return code, out


def test_snr_and_epr(tmp_path):
    code, out = _run(tmp_path, "snr", "snr", PARAMS / "measured.ini")
    assert code == 0
    snr = json.loads((out / "snr.json").read_text())
    assert snr["eta_eff"] == pytest.approx(snr["eta_disc"] * snr["eta_asg"], abs=1e-12)
    code, out = _run(tmp_path, "epr", "epr", PARAMS / "transmon.epr")
    assert code == 0
    rep = json.loads((out / "epr.json").read_text())
    assert rep["alpha_MHz"][0] == pytest.approx(-200.0, rel=1e-12)


def test_byte_identical_reruns(tmp_path):
    for scen, extra in (("toy", ["-n", 50, "--dt-ns", 10]),
                        ("lindblad", [PARAMS / "ideal.ini"]),
                        ("catch", [PARAMS / "ideal.ini", "-n", 200, "-D", "run.grid_max_us=2"])):
        dirs = []
        for i in range(2):
            code, out = _run(tmp_path, f"{scen}{i}", scen, *extra, "-s", 17)
            assert code == 0
            dirs.append(out)
        names = sorted(p.name for p in dirs[0].iterdir())
        assert names == sorted(p.name for p in dirs[1].iterdir())
        for n in names:
            assert (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes(), n


def test_manifest_reproduces(tmp_path):
    code, out = _run(tmp_path, "a", "catch", PARAMS / "ideal.ini", "-n", 100, "-s", 3,
                     "-D", "run.grid_max_us=2")
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_hash"] == config_hash(man["config"])
    fit = json.loads((out / "fit.json").read_text())
    assert {"a", "b", "c", "tau", "a2", "b2", "c2", "tau2"} <= fit.keys()
    header = (out / "tomogram.csv").read_text().splitlines()[0]
    assert header == "dt_catch_us,Z,X,Y,P_BB,N_surviving"
    cfg = tmp_path / "from_manifest.ini"
    cfg.write_text(man["config"])
    code, again = _run(tmp_path, "b", man["scenario"], cfg, "-n", man["n_traj"],
                       "-s", man["seed"])
    assert code == 0
    man2 = json.loads((again / "manifest.json").read_text())
    assert man2["artifacts"] == man["artifacts"]


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("JUMPCATCH_OUT", str(tmp_path / "env"))
    assert main(["epr", str(PARAMS / "transmon.epr")]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


def test_exit_codes(tmp_path):
    assert _run(tmp_path, "x", "catch")[0] == 2
    assert _run(tmp_path, "x", "catch", tmp_path / "nope.ini")[0] == 2
    assert _run(tmp_path, "x", "snr", PARAMS / "measured.ini", "-D", "cavity.kappa_MHz=-1")[0] == 2
    code, _ = _run(tmp_path, "x", "catch", PARAMS / "simulation.ini", "--dt-ns", 5)
    assert code == 3


def test_empty_reverse_arm(tmp_path):
    code, out = _run(tmp_path, "rev", "reverse", PARAMS / "simulation.ini", "-n", 2,
                     "-D", "run.grid_max_us=0.52", "-D", "run.dt_catch_us=4.16",
                     "-D", "run.n_streams=4", "-D", "run.calib_streams=8")
    assert code == 0
    assert (out / "reverse.csv").read_text() == "arm,dt_catch_us,theta_I,phi_I,P_G,P_D,n\n"
    man = json.loads((out / "manifest.json").read_text())
    assert man["notes"]["reverse_samples"]["catch"] == 0


def test_ideal_reverse(tmp_path):
    code, out = _run(tmp_path, "ir", "reverse", PARAMS / "ideal.ini")
    assert code == 0
    rows = (out / "reverse.csv").read_text().splitlines()
    assert len(rows) == 2
    P_G = float(rows[1].split(",")[4])
    assert P_G == pytest.approx(1.0, abs=1e-9)
    assert np.isfinite(float(rows[1].split(",")[1]))
