import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from dcsb import __version__
from dcsb.bath import PhysParams
from dcsb.cli import (RunConfig, config_from_metadata, fmt, main, parse_config, read_metadata)
from dcsb.errors import ConfigError

DELTA = PhysParams().delta_freq


def _read(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=object)


def _col(rows, j):
    return rows[:, j].astype(float)


def _zero_crossings(t, v, after=0.0):
    sel = t >= after
    s = np.sign(v[sel])
    s = s[s != 0]
    return int(np.sum(s[1:] != s[:-1]))


# ---------------------------------------------------------------------------
# configuration

def test_defaults():
    cfg = parse_config()
    p = cfg.params
    assert (p.kT, p.delta, p.omega_c, p.gamma, p.zeta) == (26.0, 1.0, 100.0, 0.0, 0.0)
    k = cfg.kernel
    assert (k.kernel_scale, k.gamma_eff_mode, k.exponent_mode, k.f_mode) == \
        ("calibrated", "scaled", "rederived", "high_t")


def test_empty_file_gives_defaults(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# nothing\n\n")
    assert parse_config(str(f)).to_dict() == parse_config().to_dict()


def test_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("gamma = 0.1\nzeta = 0.05  # trailing comment\nkernel-scale = paper\n")
    cfg = parse_config(str(f), {"gamma": "0.2"})
    assert cfg.params.gamma == 0.2 and cfg.params.zeta == 0.05
    assert cfg.kernel.kernel_scale == "paper_literal"


def test_invalid_values_are_located(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("zeta = 0.1\ngamma = -1\n")
    with pytest.raises(ConfigError, match=r"run\.cfg:2"):
        parse_config(str(f))
    with pytest.raises(ConfigError, match="--gamma"):
        parse_config(None, {"gamma": "-1"})


def test_unknown_key_is_an_error(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("gamma = 0.1\ntemperature = 300\n")
    with pytest.raises(ConfigError, match=r"run\.cfg:2.*temperature"):
        parse_config(str(f))


@pytest.mark.parametrize("flags", [{"n_points": "1"}, {"t_max": "0"}, {"gamma_range": "0:1:1"},
                                   {"gamma_range": "0:1"}, {"model": "xx"}, {"jobs": "0"},
                                   {"models": "dc,ib"}, {"zeta_list": "0,-1"}])
def test_run_config_invariants(flags):
    with pytest.raises(ConfigError):
        parse_config(None, flags)


def test_missing_file():
    with pytest.raises(ConfigError):
        parse_config("/nonexistent/run.cfg")


def test_fmt():
    assert fmt(0.1) == "1.0000000000000001e-01"
    assert float(fmt(math.pi)) == math.pi
    assert fmt(-0.0) == fmt(0.0)
    assert fmt(math.inf) == "inf"


# ---------------------------------------------------------------------------
# commands

def test_simulate_free(tmp_path):
    out = tmp_path / "free.csv"
    assert main(["simulate", "--t-max", "10", "--n-points", "201", "--out", str(out)]) == 0
    header, rows = _read(out)
    assert header == ["t_ps", "sigma_z"] and len(rows) == 201
    t, v = _col(rows, 0), _col(rows, 1)
    assert np.max(np.abs(v - np.cos(DELTA * t))) <= 1e-6
    meta = read_metadata(out)
    assert meta["oracle"]["max_abs_diff"] <= 1e-6
    assert meta["version"] == __version__ and meta["command"] == "simulate"


def test_simulate_overdamped_sb(tmp_path):
    out = tmp_path / "sb.csv"
    assert main(["simulate", "--gamma", "0.1", "--out", str(out)]) == 0
    _, rows = _read(out)
    assert _zero_crossings(_col(rows, 0), _col(rows, 1), after=50.0) <= 1


def test_simulate_revival(tmp_path):
    out = tmp_path / "dc.csv"
    assert main(["simulate", "--gamma", "0.1", "--zeta", "0.1", "--out", str(out)]) == 0
    _, rows = _read(out)
    assert _zero_crossings(_col(rows, 0), _col(rows, 1)) >= 3


def test_simulate_exact_mode(tmp_path):
    out = tmp_path / "ex.csv"
    assert main(["simulate", "--gamma", "0.1", "--zeta", "0.1", "--f-mode", "exact",
                 "--t-max", "100", "--n-points", "101", "--out", str(out)]) == 0
    _, rows = _read(out)
    assert float(rows[0, 1]) == 1.0
    meta = read_metadata(out)
    assert meta["oracle"]["max_abs_diff"] <= 1e-6
    assert meta["trace"]["talbot_points"] < 10


def test_poles_free(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["poles", "--out", str(out)]) == 0
    header, rows = _read(out)
    assert header == ["re_per_ps", "im_per_ps", "residue_re", "residue_im", "tau_ps", "freq_per_ps"]
    assert len(rows) == 2
    assert np.allclose(np.sort(_col(rows, 1)), [-DELTA, DELTA], atol=1e-12)
    assert np.allclose(_col(rows, 2), 0.5, atol=1e-12)
    assert list(rows[:, 4]) == ["inf", "inf"]


def test_poles_sb_incoherent(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["poles", "--model", "sb", "--gamma", "0.05", "--out", str(out)]) == 0
    _, rows = _read(out)
    assert np.all(_col(rows, 1) == 0.0)


def test_poles_dc_coherent_and_sorted(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["poles", "--gamma", "0.1", "--zeta", "0.1", "--out", str(out)]) == 0
    _, rows = _read(out)
    assert np.any(_col(rows, 1) != 0.0)
    mag = np.hypot(_col(rows, 2), _col(rows, 3))
    assert np.all(np.diff(mag) <= 0)
    assert read_metadata(out)["residue_sum"] == pytest.approx(1.0, abs=1e-8)


def test_poles_exact_mode(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["poles", "--gamma", "0.1", "--zeta", "0.1", "--f-mode", "exact",
                 "--out", str(out)]) == 0
    _, rows = _read(out)
    assert np.any(_col(rows, 1) != 0.0)


def _sweep(tmp_path, name, *extra):
    out = tmp_path / name
    args = ["sweep", "--gamma-range", "0.005:0.5:25", "--out", str(out), *extra]
    assert main(args) == 0
    return out


def test_sweep_sb_modes_end_at_transition(tmp_path):
    out = _sweep(tmp_path, "s.csv", "--zeta-list", "0")
    header, rows = _read(out)
    assert header == ["gamma", "zeta", "mode_index", "tau_ps", "freq_per_ps", "residue_mag"]
    assert set(rows[:, 2]) == {"1"}
    assert _col(rows, 0).max() < 0.0125
    assert read_metadata(out)["omitted_rows"] == 24


def test_sweep_second_mode_survives(tmp_path):
    out = _sweep(tmp_path, "s.csv", "--zeta-list", "0.05,0.1")
    _, rows = _read(out)
    for z in ("0.05", "0.1"):
        sel = (_col(rows, 1) == float(z)) & (rows[:, 2] == "2")
        assert sel.sum() == 25
    keys = [(float(r[0]), float(r[1]), int(r[2])) for r in rows]
    assert keys == sorted(keys)


def test_sweep_deterministic_across_schedules(tmp_path):
    a = _sweep(tmp_path, "a.csv", "--zeta-list", "0,0.05,0.1")
    b = _sweep(tmp_path, "b.csv", "--zeta-list", "0.1,0.05,0", "--jobs", "3")
    assert a.read_bytes() == b.read_bytes()


def test_sweep_requires_range(tmp_path):
    assert main(["sweep", "--out", str(tmp_path / "x.csv")]) == 2


def test_compare_sb_dc_identical(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["compare", "--models", "sb,dc", "--gamma", "0.1", "--out", str(out)]) == 0
    header, rows = _read(out)
    assert header == ["t_ps", "sb", "dc"]
    assert np.max(np.abs(_col(rows, 1) - _col(rows, 2))) <= 1e-10


def test_compare_nn_faster(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["compare", "--models", "sb,nn", "--gamma", "0.1", "--t-max", "100",
                 "--n-points", "4001", "--out", str(out)]) == 0
    _, rows = _read(out)
    t = _col(rows, 0)
    assert _zero_crossings(t, _col(rows, 2)) > _zero_crossings(t, _col(rows, 1))

    out = tmp_path / "d.csv"
    assert main(["compare", "--models", "dc,nn", "--gamma", "0.1", "--zeta", "0.1",
                 "--t-max", "100", "--n-points", "4001", "--out", str(out)]) == 0
    _, rows = _read(out)
    assert _zero_crossings(t, _col(rows, 2)) > _zero_crossings(t, _col(rows, 1))
    m = read_metadata(out)["models"]
    assert m["nn"]["dominant_freq"] > m["dc"]["dominant_freq"]


# ---------------------------------------------------------------------------
# metadata, exit codes and entry points

def test_metadata_round_trip(tmp_path):
    out = tmp_path / "p.csv"
    args = ["poles", "--gamma", "0.2", "--zeta", "0.05", "--kernel-scale", "paper",
            "--fc-exponent", "paper", "--gamma-eff", "literal", "--out", str(out)]
    assert main(args) == 0
    meta = read_metadata(out)
    cfg = config_from_metadata(meta)
    assert isinstance(cfg, RunConfig)
    assert cfg.to_dict() == meta["config"]
    assert json.loads(json.dumps(meta)) == meta
    assert meta["duration_s"] >= 0
    # re-running from the record reproduces the file exactly
    rerun = tmp_path / "q.csv"
    flags = {"gamma": "0.2", "zeta": "0.05", "kernel_scale": "paper",
             "fc_exponent": "paper", "gamma_eff": "literal", "out": str(rerun)}
    assert parse_config(None, flags).params == cfg.params
    assert main(["poles", *sum(([f"--{k.replace('_', '-')}", v] for k, v in flags.items()), [])]) == 0
    assert rerun.read_bytes() == out.read_bytes()


def test_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--gamma", "-1"]) == 2
    assert main(["simulate", "--gamma", "abc"]) == 2
    assert main(["bogus"]) == 2
    assert main(["simulate", "--model", "nn", "--zeta", "0.1", "--t-max", "5"]) == 2
    assert main(["poles", "--gamma", "0.1", "--zeta", "1e-12"]) == 3
    err = capsys.readouterr().err
    assert "DegeneratePole" in err


def test_stdout_output(capsys):
    assert main(["simulate", "--t-max", "1", "--n-points", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t_ps,sigma_z" and len(lines) == 4


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "dcsb", "poles"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("re_per_ps,")
    r = subprocess.run([sys.executable, "-m", "dcsb", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout
