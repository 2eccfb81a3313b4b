"""Acceptance criteria for the bundled adiabatic and impulsive experiments.

Each test prints one ``CRITERION n: PASS|FAIL`` line listing its sub-checks
and then asserts all of them.  Run with ``pytest tests/test_acceptance.py -s``
(or ``-rA``) to see the lines; they are printed even under capture.
"""

import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from rotorfluc import quantum, runner
from rotorfluc.config import load_config
from rotorfluc.observables import coherence_decomposition
from rotorfluc.oracle import run_checks
from rotorfluc.pulse import intensity

ISO_DELTA = math.sqrt(4 / 45)
STRONG_LIMIT = 1 / math.sqrt(8)


def report(capsys, n, checks):
    """`checks` is a list of ``(label, ok, detail)``."""
    ok = all(c[1] for c in checks)
    parts = "; ".join(f"{label} {'ok' if good else 'FAILED'} ({detail})" for label, good, detail in checks)
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {parts}")
    failed = [c[0] for c in checks if not c[1]]
    assert not failed, f"criterion {n} failed sub-checks: {failed}"


@pytest.fixture(scope="module")
def impulsive(tmp_path_factory):
    cfg = load_config("impulsive.cfg")
    return runner.run(cfg, tmp_path_factory.mktemp("impulsive"))


@pytest.fixture(scope="module")
def adiabatic(tmp_path_factory):
    cfg = load_config("adiabatic.cfg")
    return runner.run(cfg, tmp_path_factory.mktemp("adiabatic"))


def test_criterion_1_isotropic_moments(impulsive, capsys):
    q, c = impulsive.quantum.series, impulsive.classical.series
    assert q.times_ps[0] <= impulsive.config.pulse.start_ps
    N = impulsive.config.classical.n_traj
    sigma_m = math.sqrt(4 / 45 / N)
    # delta method for sqrt(<z^4> - <z^2>^2) with z uniform on [-1, 1]
    f_mean = 1 / 5 - 2 / 9
    f_var = 1 / 9 - 4 / 21 + 4 / 45 - f_mean**2
    sigma_d = math.sqrt(f_var / N) / (2 * ISO_DELTA)
    checks = [
        ("quantum <cos2>=1/3", abs(q.mean_cos2[0] - 1 / 3) < 1e-6, f"{q.mean_cos2[0]:.10f}"),
        ("quantum delta=0.2981", abs(q.delta_cos2[0] - ISO_DELTA) < 1e-6, f"{q.delta_cos2[0]:.10f}"),
        ("classical <cos2> within 3 sigma", abs(c.mean_cos2[0] - 1 / 3) < 3 * sigma_m,
         f"{c.mean_cos2[0]:.5f}, sigma {sigma_m:.1e}"),
        ("classical delta within 3 sigma", abs(c.delta_cos2[0] - ISO_DELTA) < 3 * sigma_d,
         f"{c.delta_cos2[0]:.5f}, sigma {sigma_d:.1e}"),
    ]
    report(capsys, 1, checks)


def test_criterion_2_adiabatic(adiabatic, capsys):
    q, c = adiabatic.quantum.series, adiabatic.classical.series
    pulse = adiabatic.config.pulse
    qi, ci = int(np.argmax(q.mean_cos2)), int(np.argmax(c.mean_cos2))
    rho = spearmanr(q.mean_cos2, intensity(pulse, q.times_ps)).statistic
    checks = [
        ("quantum peak 0.80+-0.01", abs(q.mean_cos2[qi] - 0.80) <= 0.01, f"{q.mean_cos2[qi]:.4f}"),
        ("peak delta 0.17+-0.03", abs(q.delta_cos2[qi] - 0.17) <= 0.03, f"{q.delta_cos2[qi]:.4f}"),
        ("tracks I(t)", rho > 0.99 and abs(q.times_ps[qi] - pulse.center_ps) < 0.05 * pulse.fwhm_ps,
         f"rank corr {rho:.4f}, peak at {q.times_ps[qi]:.1f} ps"),
        ("classical mean > quantum mean", c.mean_cos2[ci] > q.mean_cos2[qi],
         f"{c.mean_cos2[ci]:.4f} vs {q.mean_cos2[qi]:.4f}"),
        ("classical delta < quantum delta", c.delta_cos2[ci] < q.delta_cos2[qi],
         f"{c.delta_cos2[ci]:.4f} vs {q.delta_cos2[qi]:.4f}"),
    ]
    report(capsys, 2, checks)


def test_criterion_3_impulsive(impulsive, adiabatic, capsys):
    q = impulsive.quantum.series
    rev = impulsive.analysis["quantum"]["revival"]
    tau = rev["revival_ps"]
    t0 = impulsive.config.pulse.center_ps
    peak = float(q.mean_cos2.max())
    adiabatic_delta = adiabatic.analysis["quantum"]["peak"]["delta_cos2"]
    quarter = [w for w in rev["windows"] if w["k"] in (1, 3)]
    checks = [
        ("peak 0.80+-0.05", abs(peak - 0.80) <= 0.05, f"{peak:.4f}"),
        ("tau_rev ~ 210 ps", abs(tau - 210) < 1e-6, f"{tau:.3f}"),
        ("revival max at tau+-2%", abs(rev["revival_peak_ps"] - (t0 + tau)) <= 0.02 * tau,
         f"{rev['revival_peak_ps']:.2f} ps"),
        ("delta baseline 0.24+-0.03", abs(rev["baseline_delta"] - 0.24) <= 0.03, f"{rev['baseline_delta']:.4f}"),
        ("delta baseline > adiabatic", rev["baseline_delta"] > adiabatic_delta,
         f"{rev['baseline_delta']:.4f} vs {adiabatic_delta:.4f}"),
        ("quarter-revival delta excursion >= 0.05", all(w["delta_excursion"] >= 0.05 for w in quarter),
         ", ".join(f"{w['delta_excursion']:.4f}" for w in quarter)),
        ("quarter-revival mean static < 0.02", all(w["mean_excursion"] < 0.02 for w in quarter),
         ", ".join(f"{w['mean_excursion']:.4f}" for w in quarter)),
    ]
    report(capsys, 3, checks)


def test_criterion_4_coherence_structure(impulsive, capsys):
    cfg = impulsive.config
    q, coh = impulsive.quantum.series, impulsive.quantum.coherence
    tau = cfg.molecule.revival_time_ps
    t = q.times_ps
    post = t > cfg.pulse.stop_ps

    base = np.linspace(cfg.pulse.stop_ps + 1, cfg.pulse.stop_ps + 1 + tau / 2, 101, endpoint=False)
    grid = np.concatenate([base, base + tau / 2, base + tau])
    trs = quantum.propagate_ensemble(quantum.thermal_members(cfg.molecule, cfg.quantum.thermal_cutoff),
                                     cfg.molecule, cfg.pulse, grid, impulsive.quantum.J_max)
    d = coherence_decomposition(quantum.assemble_density(trs))
    a, half, full = slice(0, 101), slice(101, 202), slice(202, 303)
    c2_err = float(np.max(np.abs(d.c2[a] - d.c2[full])))
    c4_err = float(np.max(np.abs(d.c4[a] - d.c4[half])))

    win = np.abs(t - (cfg.pulse.center_ps + tau / 4)) <= 0.05 * tau
    r4 = abs(np.corrcoef(q.delta_cos2[win], coh.c4[win])[0, 1])
    r2 = abs(np.corrcoef(q.delta_cos2[win], coh.c2[win])[0, 1])
    checks = [
        ("c0+c2+c4=<cos4>", np.max(np.abs(coh.total - q.mean_cos4)) < 1e-10,
         f"{np.max(np.abs(coh.total - q.mean_cos4)):.1e}"),
        ("c0 constant", np.ptp(coh.c0[post]) < 1e-8, f"{np.ptp(coh.c0[post]):.1e}"),
        ("c2 period tau", c2_err < 1e-6, f"{c2_err:.1e}"),
        ("c4 period tau/2", c4_err < 1e-6, f"{c4_err:.1e}"),
        ("c4 drives quarter-revival beat", r4 > r2, f"|r| {r4:.3f} vs {r2:.3f}"),
    ]
    report(capsys, 4, checks)


def test_criterion_5_agreement_window(impulsive, capsys):
    q, c = impulsive.quantum.series, impulsive.classical.series
    tau = impulsive.config.molecule.revival_time_ps
    early = q.times_ps < impulsive.config.pulse.center_ps + 0.15 * tau
    dm = float(np.max(np.abs(q.mean_cos2[early] - c.mean_cos2[early])))
    dd = float(np.max(np.abs(q.delta_cos2[early] - c.delta_cos2[early])))
    late = lambda rev: [w for w in rev["windows"] if w["k"] >= 2]  # noqa: E731
    cl = late(impulsive.analysis["classical"]["revival"])
    ql = late(impulsive.analysis["quantum"]["revival"])
    c_feat = max(max(w["mean_excursion"], w["delta_excursion"]) for w in cl)
    q_feat = max(max(w["mean_excursion"], w["delta_excursion"]) for w in ql)
    checks = [
        ("early |dq-dc| mean < 0.03", dm < 0.03, f"{dm:.4f}"),
        ("early |dq-dc| delta < 0.03", dd < 0.03, f"{dd:.4f}"),
        ("no classical revival > 0.02", c_feat <= 0.02, f"{c_feat:.4f}"),
        ("quantum revival > 0.02", q_feat > 0.02, f"{q_feat:.4f}"),
    ]
    report(capsys, 5, checks)


def test_criterion_6_baselines(impulsive, capsys):
    b = impulsive.analysis["baselines"]
    checks = [
        ("plateau ~ quantum baseline (0.02)",
         abs(b["classical_plateau_mean"] - b["quantum_baseline_mean"]) <= 0.02,
         f"{b['classical_plateau_mean']:.4f} vs {b['quantum_baseline_mean']:.4f}"),
        ("time-average mean = baseline (0.01)",
         abs(b["quantum_time_average_mean"] - b["quantum_baseline_mean"]) <= 0.01,
         f"{b['quantum_time_average_mean']:.6f} vs {b['quantum_baseline_mean']:.6f}"),
        ("time-average delta < baseline",
         b["quantum_time_average_delta"] < b["quantum_baseline_delta"],
         f"{b['quantum_time_average_delta']:.4f} vs {b['quantum_baseline_delta']:.4f}"),
    ]
    report(capsys, 6, checks)


def test_criterion_7_strong_field_limit(capsys):
    cfg = load_config("impulsive.cfg")
    mol = cfg.molecule
    ens = quantum.thermal_members(mol, cfg.quantum.thermal_cutoff)
    scan = []
    failure = None
    I = 2.5e11
    while I <= 1.28e14:
        pulse = replace(cfg.pulse, Imax_Wcm2=I)
        grid = np.linspace(pulse.start_ps, pulse.stop_ps + 20.0, 64)
        try:
            J = quantum.converge_ensemble_jmax(ens, mol, pulse, grid, cfg.quantum.jmax_tol)
            d = coherence_decomposition(quantum.assemble_density(
                quantum.propagate_ensemble(ens, mol, pulse, grid, J, rtol=cfg.quantum.rtol)))
        except (quantum.NoConvergence, quantum.TruncationOverflow) as exc:
            failure = f"{I:.2e} W/cm2: {type(exc).__name__}"
            break
        scan.append((I, J, d.baseline(-1)[1]))
        I *= 2
    deltas = [s[2] for s in scan]
    checks = [
        ("monotone increase", all(b > a for a, b in zip(deltas, deltas[1:])),
         ", ".join(f"{I:.1e}:{v:.4f}(J{J})" for I, J, v in scan)),
        ("below 1/sqrt(8)", max(deltas) < STRONG_LIMIT, f"limit {STRONG_LIMIT:.4f}"),
        (">= 0.34 at highest feasible", deltas[-1] >= 0.34, f"{deltas[-1]:.4f}; stopped at {failure}"),
    ]
    report(capsys, 7, checks)


def test_criterion_8_oracles_and_determinism(impulsive, tmp_path, capsys):
    results = run_checks("all")
    rerun = runner.run(impulsive.config, tmp_path / "rerun")
    identical = all(
        (tmp_path / "rerun" / name).read_bytes() == (Path(impulsive.config.output_dir) / name).read_bytes()
        for name in impulsive.files
    )
    checks = [(r.name, r.passed, f"{r.error:.1e} <= {r.tol:.0e}") for r in results]
    checks.append(("byte-identical rerun", identical and rerun.files == impulsive.files, f"{len(rerun.files)} files"))
    checks.append(("checksums verify", runner.verify_manifest(tmp_path / "rerun"), "manifest"))
    report(capsys, 8, checks)
