"""Flat ``key = value`` run configuration.

Keys carry their units, e.g.::

    molecule.B_cm1 = 0.0794
    molecule.delta_alpha_A3 = 3.95
    molecule.temperature_K = 0.5
    pulse.Imax_Wcm2 = 2e12
    pulse.fwhm_ps = 0.5
    run.mode = both

Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .pulse import DEFAULT_B_CM1, MoleculeSpec, PulseSpec

MODES = ("quantum", "classical", "both")
REGIMES = ("auto", "impulsive", "adiabatic")
_SECTION = "rotorfluc"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    n_samples: int = 2048
    regime: str = "auto"
    start_ps: float | None = None
    stop_ps: float | None = None


@dataclass(frozen=True)
class QuantumSpec:
    thermal_cutoff: float = 0.999
    jmax: int | None = None
    jmax_tol: float = 1e-4
    rtol: float = 1e-10


@dataclass(frozen=True)
class ClassicalSpec:
    n_traj: int = 100_000
    step_ps: float | None = None


@dataclass(frozen=True)
class AnalysisSpec:
    n_bins: int = 256
    distributions: bool = True


@dataclass(frozen=True)
class RunConfig:
    molecule: MoleculeSpec = field(default_factory=MoleculeSpec)
    pulse: PulseSpec = field(default_factory=lambda: PulseSpec(2e12, 0.5))
    mode: str = "both"
    grid: GridSpec = field(default_factory=GridSpec)
    quantum: QuantumSpec = field(default_factory=QuantumSpec)
    classical: ClassicalSpec = field(default_factory=ClassicalSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}, got {self.mode!r}")
        if self.grid.regime not in REGIMES:
            raise ConfigError(f"grid.regime must be one of {REGIMES}, got {self.grid.regime!r}")
        if self.grid.n_samples < 2:
            raise ConfigError("grid.n_samples must be at least 2")
        if not 0 < self.quantum.thermal_cutoff <= 1:
            raise ConfigError("quantum.thermal_cutoff must lie in (0, 1]")
        if self.classical.n_traj < 1:
            raise ConfigError("classical.n_traj must be positive")
        if self.classical.step_ps is not None and not self.classical.step_ps > 0:
            raise ConfigError("classical.step_ps must be positive")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def regime(self) -> str:
        if self.grid.regime != "auto":
            return self.grid.regime
        return "impulsive" if self.pulse.fwhm_ps < 0.1 * self.molecule.revival_time_ps else "adiabatic"

    def time_grid(self):
        import numpy as np

        p, g = self.pulse, self.grid
        if self.regime == "impulsive":
            start = p.start_ps
            stop = p.center_ps + 1.15 * self.molecule.revival_time_ps
        else:
            start = p.center_ps - 1.5 * p.fwhm_ps
            stop = p.center_ps + 1.5 * p.fwhm_ps
        start = g.start_ps if g.start_ps is not None else start
        stop = g.stop_ps if g.stop_ps is not None else stop
        if not stop > start:
            raise ConfigError("grid stop must exceed grid start")
        return np.linspace(start, stop, g.n_samples)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        return "\n".join(f"{k} = {_fmt(v)}" for k, v in _flatten(self).items()) + "\n"


def _opt_float(s):
    return None if s.lower() in ("", "none", "auto") else float(s)


def _opt_int(s):
    return None if s.lower() in ("", "none", "auto") else int(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (group attribute or None for top level, field, parser)
KEYS = {
    "molecule.B_cm1": ("molecule", "B_cm1", float),
    "molecule.delta_alpha_A3": ("molecule", "delta_alpha_A3", float),
    "molecule.temperature_K": ("molecule", "temperature_K", float),
    "pulse.Imax_Wcm2": ("pulse", "Imax_Wcm2", float),
    "pulse.fwhm_ps": ("pulse", "fwhm_ps", float),
    "pulse.center_ps": ("pulse", "center_ps", float),
    "pulse.window_factor": ("pulse", "window_factor", float),
    "run.mode": (None, "mode", str),
    "run.output_dir": (None, "output_dir", str),
    "grid.n_samples": ("grid", "n_samples", int),
    "grid.regime": ("grid", "regime", str),
    "grid.start_ps": ("grid", "start_ps", _opt_float),
    "grid.stop_ps": ("grid", "stop_ps", _opt_float),
    "quantum.thermal_cutoff": ("quantum", "thermal_cutoff", float),
    "quantum.jmax": ("quantum", "jmax", _opt_int),
    "quantum.jmax_tol": ("quantum", "jmax_tol", float),
    "quantum.rtol": ("quantum", "rtol", float),
    "classical.n_traj": ("classical", "n_traj", int),
    "classical.seed": (None, "seed", int),
    "classical.step_ps": ("classical", "step_ps", _opt_float),
    "analysis.n_bins": ("analysis", "n_bins", int),
    "analysis.distributions": ("analysis", "distributions", _bool),
}


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _flatten(cfg: RunConfig) -> dict:
    out = {}
    for key, (group, attr, _) in KEYS.items():
        obj = cfg if group is None else getattr(cfg, group)
        out[key] = getattr(obj, attr)
    return out


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    groups: dict = {}
    top: dict = {}
    for key, raw in cp.items(_SECTION):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        group, attr, conv = KEYS[key]
        try:
            value = conv(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"{key} must be finite")
        (top if group is None else groups.setdefault(group, {}))[attr] = value
    try:
        molecule = MoleculeSpec(**{"B_cm1": DEFAULT_B_CM1, **groups.get("molecule", {})})
        pulse_kw = groups.get("pulse", {})
        missing = {"Imax_Wcm2", "fwhm_ps"} - set(pulse_kw)
        if missing:
            raise ConfigError(f"missing pulse keys: {sorted('pulse.' + m for m in missing)}")
        return RunConfig(
            molecule=molecule,
            pulse=PulseSpec(**pulse_kw),
            grid=GridSpec(**groups.get("grid", {})),
            quantum=QuantumSpec(**groups.get("quantum", {})),
            classical=ClassicalSpec(**groups.get("classical", {})),
            analysis=AnalysisSpec(**groups.get("analysis", {})),
            **top,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


BUNDLED_DIR = Path(__file__).parent / "configs"


def resolve_config_path(path: str | Path) -> Path:
    """`path` itself, or a bundled config of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = BUNDLED_DIR / p.name
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"config {str(path)!r} not found")


def load_config(path: str | Path) -> RunConfig:
    return parse_config(resolve_config_path(path).read_text())
