"""Configuration parsing, the five experiment runners, artifact round
trips, and CLI exit codes, all at micro scale."""

import hashlib
import json
import math
import os
import shutil
import warnings

import numpy as np
import pytest

from qchaos import NoisePath, duffing_spec
from qchaos.cli import main
from qchaos.config import ConfigError, config_from_dicts, load_config
from qchaos.output import read_field, read_ndjson, read_strobe_csv

DUFF_MODEL = """[model]
mass = 1.0
hbar = {hbar}
k = {k}
D = 0.0
coeffs = [0.0, 0.0, -10.0, 0.0, 0.5]
drive_amp = 10.0
drive_omega = 6.07
x_min = {x_min}
x_max = {x_max}
n = {n}
p_min = {p_min}
p_max = {p_max}
n_p = {n_p}
"""

HARM_MODEL = """[model]
mass = 1.0
hbar = {hbar}
k = {k}
D = 0.0
coeffs = [0.0, 0.0, 0.5]
drive_amp = {drive_amp}
drive_omega = {drive_omega}
x_min = {x_min}
x_max = {x_max}
n = {n}
p_min = -4.0
p_max = 4.0
n_p = 32
"""


def strong_ini(**over):
    text = DUFF_MODEL.format(hbar=0.1, k=1.0, x_min=-9, x_max=9, n=1024,
                             p_min=-16, p_max=16, n_p=64)
    text += ("\n[numerics]\nsteps_per_period = 1000\nt_total_periods = 1.0\n"
             "ensemble_n = 2\nbase_seed = 11\nrecord_stride = 100\n"
             "\n[initial]\nx0 = 2.0\n")
    if over:
        text += "\n[strong_qct]\n" + "".join(f"{k} = {v}\n"
                                             for k, v in over.items())
    return text


WEAK_INI = DUFF_MODEL.format(hbar=0.5, k=0.0, x_min=-7, x_max=7, n=128,
                             p_min=-16, p_max=16, n_p=128) + """
[numerics]
steps_per_period = 500
t_total_periods = 2.0

[initial]
x0 = 2.0

[weak_qct]
d_values = [1e-3, 5e-2]
tangent_periods = 40.0
extent_periods = 20
neg_tol = 1.0
"""

SWEEP_INI = DUFF_MODEL.format(hbar=1e-5, k=0.0, x_min=-6, x_max=6, n=16,
                              p_min=-16, p_max=16, n_p=16) + """
[numerics]
steps_per_period = 1035
t_total_periods = 20.0
ensemble_n = 2
base_seed = 7

[initial]
x0 = 1.0

[lyapunov_sweep]
k_values = [1e4, 1e5]
kind = cumulant
quantum_backaction = true
"""

STROBE_INI = HARM_MODEL.format(hbar=0.5, k=0.05, drive_amp=0.1,
                               drive_omega=2.3, x_min=-8, x_max=8, n=64) + """
[numerics]
steps_per_period = 300
t_total_periods = 23.0
ensemble_n = 3
base_seed = 5

[initial]
x0 = 1.5

[strobe_map]
density_grid_n = 32
skip_periods = 20
"""


def iso_ini(slope_min=-1.5, slope_max=-0.5):
    return HARM_MODEL.format(hbar=1e-2, k=0.0, drive_amp=0.0, drive_omega=0.0,
                             x_min=-3, x_max=3, n=256) + f"""
[numerics]
steps_per_period = 500
t_total_periods = 40.0

[initial]
x0 = 0.8

[isolated_decay]
fit_t_min_periods = 4.0
fit_t_max_periods = 40.0
envelope_bins = 6
slope_min = {slope_min}
slope_max = {slope_max}
"""


def write_ini(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def model_sections():
    return {
        "mass": 1.0, "hbar": 0.1, "k": 1.0, "D": 0.0,
        "coeffs": [0.0, 0.0, -10.0, 0.0, 0.5],
        "drive_amp": 10.0, "drive_omega": 6.07,
        "x_min": -8.0, "x_max": 8.0, "n": 64,
        "p_min": -16.0, "p_max": 16.0, "n_p": 32,
    }


def digest_dir(d, skip_ndjson_header=False):
    out = {}
    for name in sorted(os.listdir(d)):
        data = open(os.path.join(d, name), "rb").read()
        if skip_ndjson_header and name.endswith(".ndjson"):
            data = b"\n".join(data.split(b"\n")[1:])
        out[name] = hashlib.sha256(data).hexdigest()
    return out


# ------------------------------------------------------------------ config


def test_unknown_keys_and_sections_fail_closed():
    base = {"model": model_sections(),
            "numerics": {"t_total_periods": 1.0}}
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dicts("strong-qct",
                          {**base, "numerics": {"t_total_periods": 1.0,
                                                "stepz": 3}})
    with pytest.raises(ConfigError, match="unknown sections"):
        config_from_dicts("strong-qct", {**base, "extras": {}})
    with pytest.raises(ConfigError, match="missing required section"):
        config_from_dicts("strong-qct",
                          {"numerics": {"t_total_periods": 1.0}})
    with pytest.raises(ConfigError, match="missing required key: n_p"):
        bad = dict(model_sections())
        del bad["n_p"]
        config_from_dicts("strong-qct", {**base, "model": bad})
    with pytest.raises(ConfigError, match="t_total_periods"):
        config_from_dicts("strong-qct",
                          {"model": model_sections(), "numerics": {}})
    with pytest.raises(ConfigError, match="unknown experiment"):
        config_from_dicts("frobnicate", base)


def test_experiment_name_must_match():
    cfg = {"model": model_sections(),
           "numerics": {"t_total_periods": 1.0},
           "experiment": {"name": "weak-qct"}}
    with pytest.raises(ConfigError, match="does not match"):
        config_from_dicts("strong-qct", cfg)


def test_value_coercion_rules():
    sections = {"model": model_sections(),
                "numerics": {"t_total_periods": "2.5", "ensemble_n": "0x10"},
                "lyapunov_sweep": {"k_values": "[1.0, 2.0]",
                                   "quantum_backaction": "yes",
                                   "renormalize": "off"}}
    cfg = config_from_dicts("lyapunov-sweep", sections)
    assert cfg.numerics["t_total_periods"] == 2.5
    assert cfg.numerics["ensemble_n"] == 16
    assert cfg.options["k_values"] == [1.0, 2.0]
    assert cfg.options["quantum_backaction"] is True
    assert cfg.options["renormalize"] is False
    with pytest.raises(ConfigError, match="cannot parse"):
        config_from_dicts("lyapunov-sweep",
                          {**sections,
                           "lyapunov_sweep": {"k_values": "not json"}})


def test_step_resolution_is_period_commensurate():
    period = duffing_spec().drive_period
    base = {"model": model_sections()}
    cfg = config_from_dicts("strong-qct",
                            {**base, "numerics": {"t_total_periods": 1.0,
                                                  "dt": 1e-3}})
    assert cfg.steps_per_period == round(period / 1e-3)
    assert cfg.dt == pytest.approx(period / cfg.steps_per_period, rel=1e-15)
    assert cfg.steps_per_period * cfg.dt == pytest.approx(period, rel=1e-15)
    # a dt too coarse to sit near any commensurate value is rejected
    with pytest.raises(ConfigError, match="commensurate"):
        config_from_dicts("strong-qct",
                          {**base, "numerics": {"t_total_periods": 1.0,
                                                "dt": 0.9 * period}})
    # no stepping given: 1000 steps per period
    cfg = config_from_dicts("strong-qct",
                            {**base, "numerics": {"t_total_periods": 1.0}})
    assert cfg.steps_per_period == 1000


def test_width_defaults_to_minimum_uncertainty():
    cfg = config_from_dicts("strong-qct",
                            {"model": model_sections(),
                             "numerics": {"t_total_periods": 1.0}})
    assert cfg.initial["width"] == pytest.approx(math.sqrt(0.1 / 2))
    assert cfg.resolved["initial"]["width"] == cfg.initial["width"]


def test_resolved_map_round_trips():
    cfg = config_from_dicts("strong-qct",
                            {"model": model_sections(),
                             "numerics": {"t_total_periods": 1.0}})
    again = config_from_dicts(
        "strong-qct",
        {k: v for k, v in cfg.resolved.items() if k != "experiment"})
    assert again.resolved == cfg.resolved


def test_load_config_applies_cli_overrides(tmp_path):
    path = write_ini(tmp_path, strong_ini())
    cfg = load_config(path, "strong-qct", base_seed=99, workers=3)
    assert cfg.numerics["base_seed"] == 99
    assert cfg.numerics["workers"] == 3
    assert cfg.resolved["numerics"]["base_seed"] == 99
    with pytest.raises(ConfigError, match="workers"):
        load_config(path, "strong-qct", workers=0)
    bare = tmp_path / "bare.ini"
    bare.write_text("[DEFAULT]\nstray = 1\n\n[model]\nmass = 1.0\n")
    with pytest.raises(ConfigError, match="top-level"):
        load_config(str(bare), "strong-qct")


# ------------------------------------------------------------- experiments


def test_strong_qct_micro_run(tmp_path):
    out = str(tmp_path / "out")
    rc = main(["strong-qct", "--config", write_ini(tmp_path, strong_ini()),
               "--out", out])
    assert rc == 0
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["members"] == 2
    assert all(0 < v < 1.0 for v in summary["max_sqrt_vx"])
    assert summary["action_s"] > 0
    report = json.load(open(os.path.join(out, "qct-report.json")))
    assert len(report["entries"]) == 5
    assert report["config"]["k"] == 1.0
    header, rows = read_ndjson(os.path.join(out, "trajectory-0001.ndjson"))
    assert header["config"]["numerics"]["base_seed"] == 11
    assert header["version"]
    assert len(rows) == 10  # 1000 steps at stride 100
    assert {"i", "t", "x", "p", "Vx", "Vp", "Cxp", "dy", "ybar"} <= set(rows[0])
    assert rows[-1]["t"] == pytest.approx(duffing_spec().drive_period, rel=1e-12)
    assert os.path.exists(os.path.join(out, "plot.py"))


def test_strong_qct_spread_bound_exits_2(tmp_path):
    out = str(tmp_path / "out")
    ini = write_ini(tmp_path, strong_ini(vx_sqrt_max=0.05))
    rc = main(["strong-qct", "--config", ini, "--out", out])
    assert rc == 2
    # artifacts are still written before the gate fires
    assert os.path.exists(os.path.join(out, "summary.json"))


def test_strong_qct_noise_dump_replays_member_stream(tmp_path):
    out = str(tmp_path / "out")
    rc = main(["strong-qct", "--config", write_ini(tmp_path, strong_ini()),
               "--out", out, "--dump-noise", "--seed", "42"])
    assert rc == 0
    lines = [json.loads(l) for l in open(os.path.join(out, "noise-0000.ndjson"))]
    assert len(lines) == 1000
    dt = duffing_spec().drive_period / 1000
    want = NoisePath.for_member(42, 0, dt).draw(1000)
    got = np.array([l["dw"] for l in lines])
    assert np.array_equal(got, want)


def test_weak_qct_micro_run(tmp_path):
    out = str(tmp_path / "out")
    rc = main(["weak-qct", "--config", write_ini(tmp_path, WEAK_INI),
               "--out", out])
    assert rc == 0
    s = json.load(open(os.path.join(out, "summary.json")))
    assert s["d_values"] == [1e-3, 5e-2]
    assert s["l1_slice"][0] > s["l1_slice"][1] > 0
    assert s["l1_slice_strictly_decreasing"]
    # interference is suppressed as the environment strengthens
    assert abs(s["negativity"][0]) > abs(s["negativity"][1])
    assert s["lambda_bar"] > 0.3
    assert len(s["verdicts"]) == 2 and len(s["t_star"]) == 2
    field, meta = read_field(out, "quantum-d0")
    assert field.values.shape == (128, 128)
    assert meta["D"] == 1e-3
    cl, _ = read_field(out, "classical-d1")
    mass = cl.values.sum() * cl.grid.dx * cl.grid.dp
    assert mass == pytest.approx(1.0, abs=1e-6)
    _, rows = read_ndjson(os.path.join(out, "slices.ndjson"))
    assert len(rows) == 2 * 128
    report = json.load(open(os.path.join(out, "qct-report.json")))
    assert [e["extra"]["verdict"] for e in report["entries"]] == s["verdicts"]


def test_lyapunov_sweep_micro_run_and_determinism(tmp_path):
    ini = write_ini(tmp_path, SWEEP_INI)
    out = str(tmp_path / "out")
    snaps = []
    for _ in range(2):
        shutil.rmtree(out, ignore_errors=True)
        with pytest.warns(RuntimeWarning, match="shortening tau_r"):
            rc = main(["lyapunov-sweep", "--config", ini, "--out", out])
        assert rc == 0
        snaps.append(digest_dir(out))
    assert snaps[0] == snaps[1]
    s = json.load(open(os.path.join(out, "summary.json")))
    assert s["kind"] == "cumulant"
    assert [c["k"] for c in s["curve"]] == [1e4, 1e5]
    assert all(c["n"] == 2 and c["lambda_mean"] > 0 for c in s["curve"])
    _, rows = read_ndjson(os.path.join(out, "trajectory-k01-m01.ndjson"))
    assert len(rows) == 20
    assert {"t", "lambda_s", "sep", "x_sep", "realization"} <= set(rows[0])


def test_worker_count_leaves_data_unchanged(tmp_path):
    ini = write_ini(tmp_path, SWEEP_INI)
    outs = {w: str(tmp_path / f"out{w}") for w in (1, 2)}
    for w, out in outs.items():
        # subprocess workers keep their warnings; silence the in-process run
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rc = main(["lyapunov-sweep", "--config", ini, "--out", out,
                       "--workers", str(w)])
        assert rc == 0
    # headers embed the worker count; every data row must match exactly
    d1 = digest_dir(outs[1], skip_ndjson_header=True)
    d2 = digest_dir(outs[2], skip_ndjson_header=True)
    assert {k: v for k, v in d1.items() if k != "summary.json"} == \
           {k: v for k, v in d2.items() if k != "summary.json"}
    s1 = json.load(open(os.path.join(outs[1], "summary.json")))
    s2 = json.load(open(os.path.join(outs[2], "summary.json")))
    assert s1["curve"] == s2["curve"]


def test_strobe_map_micro_run(tmp_path):
    out = str(tmp_path / "out")
    rc = main(["strobe-map", "--config", write_ini(tmp_path, STROBE_INI),
               "--out", out])
    assert rc == 0
    s = json.load(open(os.path.join(out, "summary.json")))
    assert s["n_points"] == 9  # 3 members x 3 recorded periods
    assert 0.5 < s["rms_radius"] < 4.0
    pts = read_strobe_csv(os.path.join(out, "strobe.csv"))
    assert pts.shape == (9, 2)
    assert np.hypot(pts[:, 0], pts[:, 1]).max() < 5.0
    dens, meta = read_field(out, "strobe-density")
    assert dens.values.shape == (32, 32)
    assert dens.values.max() > 0
    assert meta["kde_bandwidth"] > 0


def test_isolated_decay_micro_run(tmp_path):
    out = str(tmp_path / "out")
    rc = main(["isolated-decay", "--config", write_ini(tmp_path, iso_ini()),
               "--out", out])
    assert rc == 0
    s = json.load(open(os.path.join(out, "summary.json")))
    assert s["slope_ok"]
    assert s["slope"] == pytest.approx(-1.0, abs=0.25)
    assert s["delta0"] == pytest.approx(6e-6)  # 1e-6 of the grid span
    _, rows = read_ndjson(os.path.join(out, "trajectory-decay.ndjson"))
    assert len(rows) == 40


def test_isolated_decay_slope_gate_exits_2(tmp_path):
    out = str(tmp_path / "out")
    ini = write_ini(tmp_path, iso_ini(slope_min=-0.95, slope_max=-0.9))
    rc = main(["isolated-decay", "--config", ini, "--out", out])
    assert rc == 2
    s = json.load(open(os.path.join(out, "summary.json")))
    assert not s["slope_ok"]


# --------------------------------------------------------------------- cli


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["strong-qct", "--config", str(tmp_path / "missing.ini")]) == 3
    assert "config error" in capsys.readouterr().err
    bad = tmp_path / "bad.ini"
    bad.write_text("[model\nmass=1\n")
    assert main(["strong-qct", "--config", str(bad)]) == 3
    ok = write_ini(tmp_path, strong_ini())
    assert main(["strong-qct", "--config", ok, "--workers", "0"]) == 3


def test_cli_reports_artifact_location(tmp_path, capsys):
    out = str(tmp_path / "out")
    rc = main(["isolated-decay", "--config", write_ini(tmp_path, iso_ini()),
               "--out", out])
    assert rc == 0
    text = capsys.readouterr().out
    assert f"artifacts written to {out}" in text
    assert "slope" in text
