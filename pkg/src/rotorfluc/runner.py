"""End-to-end experiments: propagate, analyse, write files and a manifest."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import classical, quantum
from .basis import cos2_operator
from .config import ClassicalSpec, RunConfig
from .observables import (
    AngularDistributionSeries,
    CoherenceDecomposition,
    InsufficientSpan,
    ObservableSeries,
    baseline_comparison,
    coherence_decomposition,
    quantum_angular_distribution,
    quantum_observables,
    revival_analysis,
)
from .pulse import MoleculeSpec

log = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"
SERIES_HEADER = "t_ps,mean_cos2,mean_cos4,delta_cos2"
COHERENCE_HEADER = "t_ps,c0,c2,c4"


class CalibrationError(RuntimeError):
    pass


def code_version() -> str:
    try:
        return metadata.version("rotorfluc")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class QuantumResult:
    series: ObservableSeries
    coherence: CoherenceDecomposition
    distribution: AngularDistributionSeries | None
    J_max: int
    members: list[dict]
    coverage: float
    norm_drift: float
    top_population: float
    steps: dict
    timings: dict


@dataclass
class ClassicalResult:
    series: ObservableSeries
    distribution: AngularDistributionSeries
    run: classical.ClassicalRun
    timings: dict


@dataclass
class RunResult:
    config: RunConfig
    quantum: QuantumResult | None
    classical: ClassicalResult | None
    analysis: dict
    manifest: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)


def run_quantum(config: RunConfig, grid=None) -> QuantumResult:
    grid = config.time_grid() if grid is None else np.asarray(grid, dtype=float)
    mol, pulse, q = config.molecule, config.pulse, config.quantum
    timings = {}
    t = time.perf_counter()
    ensemble = quantum.thermal_members(mol, q.thermal_cutoff)
    if q.jmax is None:
        J_max = quantum.converge_ensemble_jmax(ensemble, mol, pulse, grid, q.jmax_tol)
        timings["jmax_convergence_s"] = time.perf_counter() - t
        t = time.perf_counter()
    else:
        J_max = q.jmax
    trajs = quantum.propagate_ensemble(ensemble, mol, pulse, grid, J_max, rtol=q.rtol)
    timings["propagation_s"] = time.perf_counter() - t
    t = time.perf_counter()
    density = quantum.assemble_density(trajs)
    series = quantum_observables(density)
    coherence = coherence_decomposition(density)
    dist = quantum_angular_distribution(density, config.analysis.n_bins) if config.analysis.distributions else None
    timings["observables_s"] = time.perf_counter() - t
    members = [
        {"J0": tr.member.J0, "M0": tr.member.M0, "weight": tr.member.weight, "J_max": J_max,
         "norm_drift": tr.norm_drift, "top_population": tr.top_population}
        for tr in trajs
    ]
    return QuantumResult(
        series, coherence, dist, J_max, members, ensemble.coverage,
        max(tr.norm_drift for tr in trajs), max(tr.top_population for tr in trajs),
        trajs[0].stats.as_dict(), timings,
    )


def run_classical(config: RunConfig, grid=None) -> ClassicalResult:
    grid = config.time_grid() if grid is None else np.asarray(grid, dtype=float)
    t = time.perf_counter()
    ens = classical.sample_initial(config.molecule, config.classical.n_traj, config.seed)
    res = classical.integrate(ens, config.molecule, config.pulse, grid, n_bins=config.analysis.n_bins,
                              step_ps=config.classical.step_ps)
    series, dist = classical.classical_observables(res)
    return ClassicalResult(series, dist, res, {"integration_s": time.perf_counter() - t})


def _peak(series: ObservableSeries, lo: float = -math.inf, hi: float = math.inf) -> dict:
    sel = np.flatnonzero((series.times_ps >= lo) & (series.times_ps <= hi))
    i = sel[np.argmax(series.mean_cos2[sel])]
    return {"t_ps": float(series.times_ps[i]), "mean_cos2": float(series.mean_cos2[i]),
            "delta_cos2": float(series.delta_cos2[i])}


def analyse(config: RunConfig, q: QuantumResult | None, c: ClassicalResult | None) -> dict:
    mol, pulse = config.molecule, config.pulse
    tau = mol.revival_time_ps
    out: dict = {"regime": config.regime, "revival_ps": tau}
    for name, res in (("quantum", q), ("classical", c)):
        if res is None:
            continue
        s = res.series
        entry = {
            "peak": _peak(s),
            "prompt_peak": _peak(s, pulse.center_ps, pulse.stop_ps + 0.1 * tau),
            "delta_cos2_min": float(s.delta_cos2.min()),
            "delta_cos2_max": float(s.delta_cos2.max()),
        }
        try:
            coh = q.coherence if name == "quantum" else None
            entry["revival"] = revival_analysis(s, mol, pulse, coherence=coh).as_dict()
        except InsufficientSpan as exc:
            entry["revival"] = None
            entry["revival_skipped"] = str(exc)
        out[name] = entry
    if q is not None and c is not None:
        peak_q, peak_c = out["quantum"]["peak"], out["classical"]["peak"]
        out["classical_mean_exceeds_quantum_at_peak"] = peak_c["mean_cos2"] > peak_q["mean_cos2"]
        out["classical_delta_below_quantum_at_peak"] = peak_c["delta_cos2"] < peak_q["delta_cos2"]
        try:
            out["baselines"] = baseline_comparison(q.series, c.series, mol, pulse, q.coherence).as_dict()
        except InsufficientSpan as exc:
            out["baselines"] = None
            out["baselines_skipped"] = str(exc)
    return out


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_series(path: Path, s: ObservableSeries) -> None:
    data = np.column_stack([s.times_ps, s.mean_cos2, s.mean_cos4, s.delta_cos2])
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=SERIES_HEADER, comments="")


def write_coherence(path: Path, c: CoherenceDecomposition) -> None:
    data = np.column_stack([c.times_ps, c.c0, c.c2, c.c4])
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=COHERENCE_HEADER, comments="")


def write_distribution(path: Path, d: AngularDistributionSeries) -> None:
    """Rows are times; the header lists ``t_ps`` then the bin-center angles in radians."""
    header = "t_ps," + ",".join(FLOAT_FMT % th for th in d.theta)
    data = np.column_stack([d.times_ps, d.rho])
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=header, comments="")


def read_series(path) -> ObservableSeries:
    t, m2, m4, _ = np.loadtxt(path, delimiter=",", skiprows=1, unpack=True, ndmin=2)
    return ObservableSeries.from_moments(t, m2, m4, Path(path).stem)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run(config: RunConfig, out_dir: str | Path | None = None) -> RunResult:
    """Run the configured pipelines and write every output file plus ``manifest.json``.

    Data files depend only on the config (including the seed); wall-clock
    figures live in the manifest alone.
    """
    wall = time.perf_counter()
    out = Path(config.output_dir if out_dir is None else out_dir)
    config = replace(config, output_dir=str(out))
    out.mkdir(parents=True, exist_ok=True)
    if config.mode == "quantum" and (config.classical != ClassicalSpec() or config.seed != 0):
        log.warning("mode=quantum: classical parameters are ignored")

    grid = config.time_grid()
    q = run_quantum(config, grid) if config.mode in ("quantum", "both") else None
    c = run_classical(config, grid) if config.mode in ("classical", "both") else None
    t = time.perf_counter()
    analysis = analyse(config, q, c)
    analysis_s = time.perf_counter() - t

    t = time.perf_counter()
    files: dict[str, str] = {}

    def emit(name, writer, obj):
        path = out / name
        writer(path, obj)
        files[name] = _sha256(path)

    if q is not None:
        emit("quantum.csv", write_series, q.series)
        emit("quantum_coherence.csv", write_coherence, q.coherence)
        if q.distribution is not None:
            emit("quantum_distribution.csv", write_distribution, q.distribution)
    if c is not None:
        emit("classical.csv", write_series, c.series)
        if config.analysis.distributions:
            emit("classical_distribution.csv", write_distribution, c.distribution)
    emit("analysis.json", _dump_json, analysis)
    writing_s = time.perf_counter() - t

    timings = {"analysis_s": analysis_s, "writing_s": writing_s}
    manifest = {
        "code_version": code_version(),
        "config": config.to_text(),
        "mode": config.mode,
        "seed": config.seed,
        "n_samples": int(grid.size),
        "files": files,
    }
    if q is not None:
        timings.update({f"quantum_{k}": v for k, v in q.timings.items()})
        manifest["quantum"] = {
            "J_max": q.J_max, "norm_drift": q.norm_drift, "top_population": q.top_population,
            "thermal_coverage": q.coverage, "steps": q.steps, "members": q.members,
        }
    if c is not None:
        timings.update({f"classical_{k}": v for k, v in c.timings.items()})
        r = c.run
        manifest["classical"] = {
            "n_traj": r.n_traj, "step_ps": r.step_ps, "n_steps": r.n_steps,
            "max_constraint_error": r.max_constraint_error, "max_pz_drift": r.max_pz_drift,
        }
    timings["wall_clock_s"] = time.perf_counter() - wall
    manifest["timings"] = timings
    _dump_json(out / "manifest.json", manifest)
    return RunResult(config, q, c, analysis, manifest, files)


def verify_manifest(out_dir: str | Path) -> bool:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    return all(_sha256(out / name) == digest for name, digest in manifest["files"].items())


# -- calibration -------------------------------------------------------------

@dataclass
class CalibrationResult:
    delta_alpha_A3: float
    peak: float
    iterations: int
    J_max: int
    history: list[tuple[float, float]]


def _peak_mean(molecule: MoleculeSpec, config: RunConfig, grid, rung: int) -> tuple[float, int]:
    """Peak quantum ``<cos^2>``, climbing the J_max ladder until truncation is negligible."""
    ensemble = quantum.thermal_members(molecule, config.quantum.thermal_cutoff)
    ladder = [r for r in quantum.JMAX_LADDER if r >= max(rung, ensemble.J0_max + 4)]
    for r in ladder:
        try:
            trajs = quantum.propagate_ensemble(ensemble, molecule, config.pulse, grid, r, rtol=config.quantum.rtol)
        except quantum.TruncationOverflow:
            continue
        return float(quantum.assemble_density(trajs).expectation(cos2_operator).max()), r
    raise quantum.NoConvergence("J_max ladder exhausted during calibration")


def calibrate_delta_alpha(config: RunConfig, target_peak: float = 0.8, *, tol: float = 1e-3,
                          upper: float = 100.0, max_iter: int = 40) -> CalibrationResult:
    """Bisect on the polarizability anisotropy until the quantum peak hits `target_peak`.

    The lower end of the bracket is Δα = 0, where the peak is exactly 1/3.
    """
    if not 1.0 / 3.0 < target_peak < 1.0:
        raise ValueError("target peak must lie in (1/3, 1)")
    grid = config.time_grid()
    rung = config.quantum.jmax or 16
    history = []

    def f(da):
        nonlocal rung
        peak, rung = _peak_mean(replace(config.molecule, delta_alpha_A3=da), config, grid, rung)
        history.append((da, peak))
        log.info("delta_alpha=%.6g A^3 -> peak %.6f (J_max %d)", da, peak, rung)
        return peak - target_peak

    lo, hi = 0.0, upper
    if f(hi) < 0:
        raise CalibrationError(f"target {target_peak} unreachable for delta_alpha <= {upper} A^3")
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        # the rung only grows with delta_alpha, so restart low on each evaluation
        rung = config.quantum.jmax or 16
        g = f(mid)
        if abs(g) < tol:
            return CalibrationResult(mid, g + target_peak, it, rung, history)
        lo, hi = (mid, hi) if g < 0 else (lo, mid)
    raise CalibrationError(f"bisection did not reach tol={tol} in {max_iter} iterations")
