import json
import logging
import math

import pytest
from hypothesis import given, settings, strategies as st

from rotorfluc import runner
from rotorfluc.cli import EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_IO, EXIT_OK, main
from rotorfluc.config import (
    AnalysisSpec,
    ClassicalSpec,
    ConfigError,
    GridSpec,
    QuantumSpec,
    RunConfig,
    load_config,
    parse_config,
)
from rotorfluc.pulse import MoleculeSpec, PulseSpec

SMALL = """\
molecule.delta_alpha_A3 = 3.90625
molecule.temperature_K = 0.5
pulse.Imax_Wcm2 = 2e12
pulse.fwhm_ps = 0.5
grid.n_samples = 300
quantum.jmax = 32
classical.n_traj = 3000
analysis.n_bins = 64
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def test_bundled_configs_parse():
    adiabatic = load_config("adiabatic.cfg")
    impulsive = load_config("impulsive.cfg")
    assert adiabatic.regime == "adiabatic" and impulsive.regime == "impulsive"
    assert adiabatic.molecule == impulsive.molecule
    assert adiabatic.pulse.fwhm_ps == 1000.0 and adiabatic.pulse.Imax_Wcm2 == 2e11
    assert impulsive.pulse.fwhm_ps == 0.5 and impulsive.pulse.Imax_Wcm2 == 2e12


def test_default_grids():
    imp = load_config("impulsive.cfg")
    g = imp.time_grid()
    assert g.size == 2048 and g[0] == imp.pulse.start_ps
    assert g[-1] == pytest.approx(1.15 * imp.molecule.revival_time_ps)
    g = load_config("adiabatic.cfg").time_grid()
    assert g[0] == -1500.0 and g[-1] == 1500.0


@settings(max_examples=60)
@given(
    B=st.floats(0.01, 10), da=st.floats(0, 100), T=st.floats(0, 300),
    I=st.floats(0, 1e14), fwhm=st.floats(1e-3, 1e4), center=st.floats(-1e3, 1e3), wf=st.floats(2, 5),
    mode=st.sampled_from(["quantum", "classical", "both"]), n=st.integers(2, 10**5),
    jmax=st.one_of(st.none(), st.integers(8, 128)), step=st.one_of(st.none(), st.floats(1e-4, 1.0)),
    seed=st.integers(0, 2**64 - 1), dist=st.booleans(),
)
def test_config_text_round_trip(B, da, T, I, fwhm, center, wf, mode, n, jmax, step, seed, dist):
    cfg = RunConfig(
        molecule=MoleculeSpec(B, da, T), pulse=PulseSpec(I, fwhm, center, wf), mode=mode,
        grid=GridSpec(n_samples=n), quantum=QuantumSpec(jmax=jmax), classical=ClassicalSpec(n, step),
        analysis=AnalysisSpec(distributions=dist), seed=seed,
    )
    assert parse_config(cfg.to_text()) == cfg


@pytest.mark.parametrize("text", [
    "pulse.Imax_Wcm2 = 1e12\npulse.fwhm_ps = 1\nmolecule.mass_amu = 3\n",
    "pulse.Imax_Wcm2 = 1e12\npulse.fwhm_ps = 1\nrun.mode = quantumish\n",
    "pulse.Imax_Wcm2 = 1e12\n",
    "pulse.Imax_Wcm2 = inf\npulse.fwhm_ps = 1\n",
    "pulse.Imax_Wcm2 = 1e12\npulse.fwhm_ps = -1\n",
    "pulse.Imax_Wcm2 = lots\npulse.fwhm_ps = 1\n",
    "pulse.Imax_Wcm2 = 1e12\npulse.fwhm_ps = 1\nclassical.seed = -4\n",
    "this is not a config",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_cli_exit_codes(tmp_path, small_cfg):
    bad = tmp_path / "bad.cfg"
    bad.write_text("pulse.fwhm_ps = 1\nfoo.bar = 2\n")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["run", "--config", str(small_cfg), "--mode", "sideways"])
    assert exc.value.code == 2

    tight = tmp_path / "tight.cfg"
    tight.write_text(SMALL.replace("quantum.jmax = 32", "quantum.jmax = 8"))
    assert main(["run", "--config", str(tight), "--mode", "quantum", "--out", str(tmp_path / "t")]) == EXIT_CONVERGENCE

    blocker = tmp_path / "occupied"
    blocker.write_text("")
    assert main(["run", "--config", str(small_cfg), "--out", str(blocker)]) == EXIT_IO
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == EXIT_IO


def test_oracle_command(capsys):
    assert main(["oracle", "--check", "matrix-elements"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("PASS matrix-elements")


def test_run_outputs_manifest_and_determinism(tmp_path, small_cfg, monkeypatch):
    monkeypatch.setenv("ROTORFLUC_THREADS", "1")
    assert main(["run", "--config", str(small_cfg), "--out", str(tmp_path / "a"), "--seed", "17"]) == EXIT_OK
    monkeypatch.setenv("ROTORFLUC_THREADS", "3")
    assert main(["run", "--config", str(small_cfg), "--out", str(tmp_path / "b"), "--seed", "17"]) == EXIT_OK
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert set(ma["files"]) == {
        "quantum.csv", "quantum_coherence.csv", "quantum_distribution.csv",
        "classical.csv", "classical_distribution.csv", "analysis.json",
    }
    assert ma["files"] == mb["files"]
    for name in ma["files"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert runner.verify_manifest(tmp_path / "a")

    echo = parse_config(ma["config"])
    assert echo.seed == 17 and echo.output_dir == str(tmp_path / "a")
    assert echo == RunConfig(**{**load_config(small_cfg).__dict__, "seed": 17, "output_dir": str(tmp_path / "a")})
    assert ma["quantum"]["J_max"] == 32 and ma["quantum"]["norm_drift"] < 1e-8
    assert {"wall_clock_s", "quantum_propagation_s", "classical_integration_s"} <= set(ma["timings"])
    assert len(ma["quantum"]["members"]) == 36

    header = (tmp_path / "a" / "quantum.csv").read_text().splitlines()[:2]
    assert header[0] == "t_ps,mean_cos2,mean_cos4,delta_cos2"
    assert (tmp_path / "a" / "quantum_coherence.csv").read_text().startswith("t_ps,c0,c2,c4\n")
    # 17 significant digits round-trip exactly
    series = runner.read_series(tmp_path / "a" / "quantum.csv")
    assert series.times_ps.size == 300

    other = tmp_path / "c"
    assert main(["run", "--config", str(small_cfg), "--out", str(other), "--seed", "18"]) == EXIT_OK
    mc = json.loads((other / "manifest.json").read_text())
    assert mc["files"]["classical.csv"] != ma["files"]["classical.csv"]
    assert mc["files"]["quantum.csv"] == ma["files"]["quantum.csv"]


def test_quantum_mode_ignores_classical_settings(tmp_path, small_cfg, caplog, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("classical machinery touched")

    monkeypatch.setattr(runner.classical, "integrate", boom)
    cfg = load_config(small_cfg)
    with caplog.at_level(logging.WARNING):
        res = runner.run(RunConfig(**{**cfg.__dict__, "mode": "quantum"}), tmp_path / "q")
    assert "classical parameters are ignored" in caplog.text
    assert res.classical is None and "classical.csv" not in res.files


def test_classical_mode_skips_quantum(tmp_path, small_cfg, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("quantum machinery touched")

    monkeypatch.setattr(runner.quantum, "propagate_ensemble", boom)
    monkeypatch.setattr(runner.quantum, "thermal_members", boom)
    assert main(["run", "--config", str(small_cfg), "--mode", "classical", "--out", str(tmp_path / "c")]) == EXIT_OK
    assert not (tmp_path / "c" / "quantum.csv").exists()


CHEAP_ADIABATIC = """\
molecule.delta_alpha_A3 = 1.0
pulse.Imax_Wcm2 = 2e11
pulse.fwhm_ps = 20
grid.n_samples = 9
grid.regime = adiabatic
"""


def test_calibration_limits(tmp_path):
    cfg = parse_config(CHEAP_ADIABATIC)
    near_isotropic = runner.calibrate_delta_alpha(cfg, 1 / 3 + 2e-3, upper=10.0)
    assert abs(near_isotropic.peak - (1 / 3 + 2e-3)) < 1e-3
    assert near_isotropic.delta_alpha_A3 < 0.5
    with pytest.raises(ValueError):
        runner.calibrate_delta_alpha(cfg, 1 / 3)

    path = tmp_path / "cheap.cfg"
    path.write_text(CHEAP_ADIABATIC)
    assert main(["calibrate", "--config", str(path), "--target", "0.99"]) == EXIT_CONVERGENCE


def test_calibration_hits_target(tmp_path):
    path = tmp_path / "cheap.cfg"
    path.write_text(CHEAP_ADIABATIC)
    out = tmp_path / "calibrated.cfg"
    assert main(["calibrate", "--config", str(path), "--target", "0.6", "--write", str(out)]) == EXIT_OK
    cfg = load_config(out)
    res = runner.run_quantum(cfg)
    assert math.isclose(res.series.mean_cos2.max(), 0.6, abs_tol=1e-3)
