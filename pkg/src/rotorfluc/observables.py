"""Alignment moments, angular distributions and revival/baseline analysis.

Conventions
-----------
``rho(theta, t)`` always includes the ``sin(theta)`` Jacobian and is integrated
over the azimuth, so an isotropic ensemble gives ``rho = sin(theta) / 2`` and
``sum(rho) * dtheta == 1``.  Values are bin averages over a uniform grid on
``[0, pi]`` (quantum: Gauss-Legendre inside each bin; classical: histogram).

The quantum post-pulse *baseline* of an observable is its ``Delta J = 0``
(population) part, which is frozen once the field is off.  For the uncertainty
it is ``sqrt(<cos^4>_0 - <cos^2>_0 ** 2)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import sph_harm_y

from .basis import cos2_operator, cos4_operator
from .pulse import MoleculeSpec, PulseSpec

VARIANCE_CLAMP = 1e-10


class InsufficientSpan(ValueError):
    pass


def uncertainty(mean_cos2, mean_cos4):
    """``sqrt(<cos^4> - <cos^2>^2)``, clamping round-off negatives only."""
    var = np.asarray(mean_cos4, dtype=float) - np.asarray(mean_cos2, dtype=float) ** 2
    if np.any(var < -VARIANCE_CLAMP):
        raise ValueError(f"negative variance {var.min():.3g} beyond round-off")
    return np.sqrt(np.maximum(var, 0.0))


@dataclass
class ObservableSeries:
    times_ps: np.ndarray
    mean_cos2: np.ndarray
    mean_cos4: np.ndarray
    delta_cos2: np.ndarray
    source: str

    @classmethod
    def from_moments(cls, times_ps, mean_cos2, mean_cos4, source):
        m2 = np.asarray(mean_cos2, dtype=float)
        m4 = np.asarray(mean_cos4, dtype=float)
        return cls(np.asarray(times_ps, dtype=float), m2, m4, uncertainty(m2, m4), source)

    def check(self, tol: float = 1e-10) -> None:
        """Raise if the moment inequalities ``m2^2 <= m4 <= m2`` are violated."""
        m2, m4 = self.mean_cos2, self.mean_cos4
        if np.any(m2 < -tol) or np.any(m2 > 1 + tol) or np.any(m4 < -tol) or np.any(m4 > 1 + tol):
            raise ValueError("moments outside [0, 1]")
        if np.any(m4 < m2 * m2 - tol) or np.any(m4 > m2 + tol):
            raise ValueError("moment inequalities violated")


@dataclass
class AngularDistributionSeries:
    theta_edges: np.ndarray
    times_ps: np.ndarray
    rho: np.ndarray  # (n_t, n_bins)

    @property
    def theta(self) -> np.ndarray:
        return 0.5 * (self.theta_edges[1:] + self.theta_edges[:-1])

    @property
    def dtheta(self) -> float:
        return float(self.theta_edges[1] - self.theta_edges[0])

    def normalization(self) -> np.ndarray:
        return self.rho.sum(axis=1) * self.dtheta

    def moment(self, f) -> np.ndarray:
        """Midpoint estimate of ``integral rho(theta) f(theta) dtheta`` per time."""
        return self.rho @ f(self.theta) * self.dtheta


@dataclass
class CoherenceDecomposition:
    """``<cos^4> = c0 + c2 + c4`` split by ``|J - J'|``; likewise ``<cos^2> = m0 + m2``."""

    times_ps: np.ndarray
    c0: np.ndarray
    c2: np.ndarray
    c4: np.ndarray
    m0: np.ndarray
    m2: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.c0 + self.c2 + self.c4

    def baseline(self, index: int = -1) -> tuple[float, float]:
        """Population-only ``(mean_cos2, delta_cos2)`` at sample `index`."""
        m0, c0 = float(self.m0[index]), float(self.c0[index])
        return m0, float(uncertainty(m0, c0))


def quantum_observables(density) -> ObservableSeries:
    """Moments ``sum_M Tr[rho_M O_M]`` of a `DensityBlockSeries`."""
    m2 = density.expectation(cos2_operator)
    m4 = density.expectation(cos4_operator)
    return ObservableSeries.from_moments(density.times_ps, m2, m4, "quantum")


def coherence_decomposition(density) -> CoherenceDecomposition:
    return CoherenceDecomposition(
        density.times_ps,
        density.expectation(cos4_operator, bands=(0,)),
        density.expectation(cos4_operator, bands=(2,)),
        density.expectation(cos4_operator, bands=(4,)),
        density.expectation(cos2_operator, bands=(0,)),
        density.expectation(cos2_operator, bands=(2,)),
    )


def coherence_splittings(J: int, B: float = 1.0) -> tuple[float, float]:
    """Level spacings ``E(J+2) - E(J)`` and ``E(J+4) - E(J)`` for ``E = B J (J+1)``."""
    if J < 0:
        raise ValueError("J must be non-negative")
    return 2.0 * B * (2 * J + 3), 4.0 * B * (2 * J + 5)


def theta_edges(n_bins: int = 256) -> np.ndarray:
    return np.linspace(0.0, math.pi, n_bins + 1)


def quantum_angular_distribution(density, n_bins: int = 256, n_gauss: int = 6,
                                 time_chunk: int = 128) -> AngularDistributionSeries:
    """``rho(theta, t)`` of the ensemble, bin-averaged with `n_gauss` nodes per bin.

    At fixed M the azimuthal integral of ``|Y_JM|^2`` is analytic, so each M block
    contributes ``2 pi sum_m w_m |sum_J c_J Y_JM(theta, 0)|^2 sin(theta)``.
    """
    edges = theta_edges(n_bins)
    x, gw = np.polynomial.legendre.leggauss(n_gauss)
    half = 0.5 * (edges[1] - edges[0])
    centers = 0.5 * (edges[1:] + edges[:-1])
    nodes = (centers[:, None] + half * x[None, :]).ravel()
    node_w = np.tile(0.5 * gw, n_bins)  # bin average = sum of these weights * f
    nt = density.times_ps.size
    acc = np.zeros((nt, nodes.size))
    for M, (w, c) in density.blocks.items():
        block = density.block(M)
        Y = np.stack([np.real(sph_harm_y(J, M, nodes, 0.0)) for J in block.J_values])
        for s in range(0, nt, time_chunk):
            amp = c[s : s + time_chunk] @ Y  # (chunk, n_mem, nodes)
            acc[s : s + time_chunk] += np.einsum("tmn,m->tn", np.abs(amp) ** 2, w)
    dens = 2.0 * math.pi * acc * np.sin(nodes)[None, :] * node_w[None, :]
    rho = dens.reshape(nt, n_bins, n_gauss).sum(axis=2)
    return AngularDistributionSeries(edges, density.times_ps, rho)


def _window_mask(t, lo, hi):
    return (t >= lo) & (t <= hi)


def _trapz_mean(t, y, lo, hi):
    """Time average of the linear interpolant of ``(t, y)`` over ``[lo, hi]``."""
    inner = (t > lo) & (t < hi)
    tt = np.concatenate([[lo], t[inner], [hi]])
    yy = np.concatenate([[np.interp(lo, t, y)], y[inner], [np.interp(hi, t, y)]])
    return float(np.trapezoid(yy, tt) / (hi - lo))


@dataclass
class FeatureWindow:
    k: int
    center_ps: float
    mean_max_ps: float
    mean_max: float
    mean_min_ps: float
    mean_min: float
    mean_excursion: float
    delta_max_ps: float
    delta_max: float
    delta_min_ps: float
    delta_min: float
    delta_excursion: float


@dataclass
class RevivalReport:
    revival_ps: float
    baseline_mean: float
    baseline_delta: float
    window_average_mean: float
    window_average_delta: float
    windows: list[FeatureWindow]
    revival_peak_ps: float
    revival_peak: float

    def window(self, k: int) -> FeatureWindow:
        return next(w for w in self.windows if w.k == k)

    def as_dict(self) -> dict:
        return asdict(self)


def revival_analysis(series: ObservableSeries, molecule: MoleculeSpec, pulse: PulseSpec,
                     coherence: CoherenceDecomposition | None = None,
                     search: float = 0.05, baseline_start: float = 0.1) -> RevivalReport:
    """Locate extrema near ``k tau_rev / 4`` (k = 1..4) and summarize the baselines.

    Windows are ``t0 + k tau/4 +- search*tau``.  The window average is taken
    over ``[0.1 tau, tau]`` after the pulse center, excluding the feature
    windows.  With `coherence` the baseline is the population part, otherwise
    the window average.
    """
    tau = molecule.revival_time_ps
    t = series.times_ps
    t0 = pulse.center_ps
    if t[-1] - t0 < (1.0 + search) * tau:
        raise InsufficientSpan(f"series must cover {(1 + search) * tau:.4g} ps after the pulse center")

    keep = _window_mask(t, t0 + baseline_start * tau, t0 + tau)
    for k in range(1, 5):
        keep &= ~_window_mask(t, t0 + k * tau / 4 - search * tau, t0 + k * tau / 4 + search * tau)
    if not np.any(keep):
        raise InsufficientSpan("no samples in the baseline window")
    avg_m = float(np.mean(series.mean_cos2[keep]))
    avg_d = float(np.mean(series.delta_cos2[keep]))
    if coherence is not None:
        base_m, base_d = coherence.baseline(-1)
    else:
        base_m, base_d = avg_m, avg_d

    windows = []
    for k in range(1, 5):
        c = t0 + k * tau / 4
        sel = _window_mask(t, c - search * tau, c + search * tau)
        tm, m, d = t[sel], series.mean_cos2[sel], series.delta_cos2[sel]
        windows.append(FeatureWindow(
            k, c,
            float(tm[m.argmax()]), float(m.max()), float(tm[m.argmin()]), float(m.min()),
            float(np.max(np.abs(m - base_m))),
            float(tm[d.argmax()]), float(d.max()), float(tm[d.argmin()]), float(d.min()),
            float(np.max(np.abs(d - base_d))),
        ))
    w4 = windows[-1]
    return RevivalReport(tau, base_m, base_d, avg_m, avg_d, windows, w4.mean_max_ps, w4.mean_max)


@dataclass
class BaselineReport:
    classical_plateau_mean: float
    classical_plateau_delta: float
    quantum_baseline_mean: float
    quantum_baseline_delta: float
    quantum_time_average_mean: float
    quantum_time_average_delta: float
    plateau_matches_baseline: bool
    average_mean_matches_baseline: bool
    average_delta_below_baseline: bool

    def as_dict(self) -> dict:
        return asdict(self)


def baseline_comparison(quantum: ObservableSeries, classical: ObservableSeries, molecule: MoleculeSpec,
                        pulse: PulseSpec, coherence: CoherenceDecomposition | None = None,
                        plateau_tol: float = 0.02, average_tol: float = 0.01) -> BaselineReport:
    """Compare the classical plateau with the quantum baseline and one-revival averages.

    The classical plateau is the mean over ``[0.1 tau, tau]`` after the pulse
    center.  The quantum time average runs over ``[t_stop, t_stop + tau]``
    starting where the pulse window ends.
    """
    if quantum.times_ps.shape != classical.times_ps.shape or not np.allclose(quantum.times_ps, classical.times_ps):
        raise ValueError("quantum and classical series use different grids")
    tau = molecule.revival_time_ps
    t = quantum.times_ps
    t0 = pulse.center_ps
    lo, hi = pulse.stop_ps, pulse.stop_ps + tau
    if t[-1] < hi:
        raise InsufficientSpan("series must cover one revival period after the pulse")
    plateau = _window_mask(t, t0 + 0.1 * tau, t0 + tau)
    cp_m = float(np.mean(classical.mean_cos2[plateau]))
    cp_d = float(np.mean(classical.delta_cos2[plateau]))
    if coherence is not None:
        qb_m, qb_d = coherence.baseline(-1)
    else:
        qb_m = float(np.mean(quantum.mean_cos2[plateau]))
        qb_d = float(np.mean(quantum.delta_cos2[plateau]))
    qa_m = _trapz_mean(t, quantum.mean_cos2, lo, hi)
    qa_d = _trapz_mean(t, quantum.delta_cos2, lo, hi)
    return BaselineReport(
        cp_m, cp_d, qb_m, qb_d, qa_m, qa_d,
        abs(cp_m - qb_m) <= plateau_tol,
        abs(qa_m - qb_m) <= average_tol,
        qa_d < qb_d,
    )
