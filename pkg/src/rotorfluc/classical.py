"""Classical rigid-rotor ensemble driven by the same pulse.

A linear rotor is described by its unit axis ``u`` and angular momentum ``L``
(units of hbar, ``L . u = 0``).  Equations of motion::

    du/dt = (L x u) / I
    dL/dt = 2 k(t) (u . z) (u x z)

Free rotation is solved exactly (``u`` turns about ``L`` at ``|L| / I``), and
the torque only changes ``L`` with ``u`` frozen.  Splitting the two flows gives a
symmetric second-order map which the Yoshida triple jump lifts to fourth
order.  Both sub-flows keep ``|u| = 1``, ``u . L = 0`` and ``L . z`` exactly;
rounding is removed by renormalizing after every step.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .observables import AngularDistributionSeries, ObservableSeries
from .pulse import MoleculeSpec, PulseSpec, au_to_ps, coupling_strength, peak_coupling, ps_to_au

_Y1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_YOSHIDA = (_Y1, 1.0 - 2.0 * _Y1, _Y1)

DEFAULT_CHUNK = 20000


class StepFailure(RuntimeError):
    pass


@dataclass
class TrajectoryEnsemble:
    """Phase-space samples; ``u`` and ``L`` have shape ``(N, 3)``."""

    u: np.ndarray
    L: np.ndarray
    moment_of_inertia: float
    seed: int

    def __len__(self):
        return self.u.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self), 1.0 / len(self))

    def energy(self, k: float = 0.0) -> np.ndarray:
        """``|L|^2 / 2I - k (u_z^2 - 1/3)`` per trajectory, in hartree."""
        return np.einsum("ij,ij->i", self.L, self.L) / (2.0 * self.moment_of_inertia) - k * (
            self.u[:, 2] ** 2 - 1.0 / 3.0
        )


def sample_initial(molecule: MoleculeSpec, N: int, seed: int, *, zero_L: bool = False) -> TrajectoryEnsemble:
    """Thermal initial conditions: isotropic ``u``, Boltzmann ``|L|`` in the plane normal to ``u``.

    Trajectory ``i`` consumes uniforms ``4i .. 4i+3`` of a Philox stream keyed
    by `seed`, so it does not depend on `N`.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if molecule.temperature_K <= 0 and not zero_L:
        raise ValueError("classical thermal sampling needs T > 0 (pass zero_L=True for a resting ensemble)")
    rng = np.random.Generator(np.random.Philox(key=seed))
    r = rng.random((N, 4))
    cos_t = 2.0 * r[:, 0] - 1.0
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
    phi = 2.0 * math.pi * r[:, 1]
    u = np.column_stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])
    # orthonormal pair spanning the plane normal to u
    e1 = np.column_stack([cos_t * np.cos(phi), cos_t * np.sin(phi), -sin_t])
    e2 = np.cross(u, e1)
    psi = 2.0 * math.pi * r[:, 2]
    I = molecule.moment_of_inertia
    if zero_L:
        mag = np.zeros(N)
    else:
        # P(|L|) ~ |L| exp(-|L|^2 / (2 I kT)): Rayleigh with sigma^2 = I kT
        mag = np.sqrt(-2.0 * I * molecule.kT * np.log1p(-r[:, 3]))
    L = mag[:, None] * (np.cos(psi)[:, None] * e1 + np.sin(psi)[:, None] * e2)
    return TrajectoryEnsemble(u, L, I, seed)


def torque(u: np.ndarray, k) -> np.ndarray:
    """``2 k (u . z) (u x z)`` for rows of `u`."""
    uz = u[:, 2]
    # u x z = (u_y, -u_x, 0)
    out = np.zeros_like(u)
    f = 2.0 * np.asarray(k) * uz
    out[:, 0] = f * u[:, 1]
    out[:, 1] = -f * u[:, 0]
    return out


def free_rotation(u: np.ndarray, L: np.ndarray, I: float, dt_au: float) -> np.ndarray:
    """Exact field-free axis after `dt_au`: rotation of ``u`` about ``L``."""
    Lmag = np.sqrt(np.einsum("ij,ij->i", L, L))
    angle = Lmag * (dt_au / I)
    safe = np.where(Lmag > 0, Lmag, 1.0)
    n = np.cross(L, u) / safe[:, None]
    return u * np.cos(angle)[:, None] + n * np.sin(angle)[:, None]


def _constrain(u, L):
    u /= np.sqrt(np.einsum("ij,ij->i", u, u))[:, None]
    L -= np.einsum("ij,ij->i", L, u)[:, None] * u
    return u, L


def split_step(u, L, I, t_au, h_au, k_of_t):
    """One fourth-order step of size `h_au` starting at `t_au`.

    `k_of_t` maps atomic-unit time to the coupling in hartree.
    """
    t = t_au
    for w in _YOSHIDA:
        s = w * h_au
        L = L + 0.5 * s * torque(u, k_of_t(t))
        u = free_rotation(u, L, I, s)
        t = t + s
        L = L + 0.5 * s * torque(u, k_of_t(t))
    return _constrain(u, L)


def _kick_times(t_au, h_au):
    """Offsets of the six torque evaluations inside one composed step."""
    out, t = [], t_au
    for w in _YOSHIDA:
        out.append(t)
        t = t + w * h_au
        out.append(t)
    return out


@numba.njit(cache=True, nogil=True, fastmath=False)
def _advance_kernel(u, L, I, h_au, w, kvals):
    """In-place equivalent of repeated `split_step` calls for rows of (u, L).

    ``kvals[j, 2s]`` and ``kvals[j, 2s + 1]`` are k at the start and end of
    stage ``s`` of step ``j``.
    """
    n = u.shape[0]
    nsteps = kvals.shape[0]
    for i in range(n):
        ux, uy, uz = u[i, 0], u[i, 1], u[i, 2]
        Lx, Ly, Lz = L[i, 0], L[i, 1], L[i, 2]
        for j in range(nsteps):
            for st in range(3):
                s = w[st] * h_au
                f = s * kvals[j, 2 * st] * uz
                Lx += f * uy
                Ly -= f * ux
                Lm = math.sqrt(Lx * Lx + Ly * Ly + Lz * Lz)
                if Lm > 0.0:
                    ang = Lm * s / I
                    c, sn = math.cos(ang), math.sin(ang)
                    nx = (Ly * uz - Lz * uy) / Lm
                    ny = (Lz * ux - Lx * uz) / Lm
                    nz = (Lx * uy - Ly * ux) / Lm
                    ux, uy, uz = ux * c + nx * sn, uy * c + ny * sn, uz * c + nz * sn
                f = s * kvals[j, 2 * st + 1] * uz
                Lx += f * uy
                Ly -= f * ux
            r = math.sqrt(ux * ux + uy * uy + uz * uz)
            ux, uy, uz = ux / r, uy / r, uz / r
            d = Lx * ux + Ly * uy + Lz * uz
            Lx, Ly, Lz = Lx - d * ux, Ly - d * uy, Lz - d * uz
        u[i, 0], u[i, 1], u[i, 2] = ux, uy, uz
        L[i, 0], L[i, 1], L[i, 2] = Lx, Ly, Lz


def advance(u, L, I, t_au, h_au, nsteps, k_of_t):
    """`nsteps` fourth-order steps of size `h_au` from `t_au`, in place."""
    kvals = np.array([_kick_times(t_au + j * h_au, h_au) for j in range(nsteps)])
    kvals = np.asarray(k_of_t(kvals), dtype=float).reshape(nsteps, 6)
    _advance_kernel(u, L, I, h_au, np.array(_YOSHIDA), kvals)
    return u, L


def default_step_ps(molecule: MoleculeSpec, pulse: PulseSpec) -> float:
    """Step resolving both the envelope and the libration in the peak well."""
    k = peak_coupling(molecule, pulse)
    h = pulse.fwhm_ps / 50.0
    if k > 0:
        # small-angle libration frequency sqrt(2 k / I) at the pulse peak
        period = 2.0 * math.pi / math.sqrt(2.0 * k / molecule.moment_of_inertia)
        h = min(h, au_to_ps(period) / 40.0)
    return h


@dataclass
class ClassicalRun:
    """Moments and angle histograms accumulated over the output grid."""

    times_ps: np.ndarray
    sum_cos2: np.ndarray
    sum_cos4: np.ndarray
    counts: np.ndarray  # (n_t, n_bins)
    theta_edges: np.ndarray
    n_traj: int
    final: TrajectoryEnsemble
    step_ps: float
    n_steps: int
    max_constraint_error: float
    max_pz_drift: float


def _thread_count() -> int:
    try:
        n = int(os.environ.get("ROTORFLUC_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


class _FreeAxis:
    """Closed-form ``u_z(t)`` of freely rotating trajectories from a reference state."""

    def __init__(self, u, L, I, t_ps):
        Lmag = np.sqrt(np.einsum("ij,ij->i", L, L))
        safe = np.where(Lmag > 0, Lmag, 1.0)
        self.omega = Lmag / I
        self.uz = u[:, 2].copy()
        self.nz = (L[:, 0] * u[:, 1] - L[:, 1] * u[:, 0]) / safe
        self.t = t_ps

    def z(self, t_ps):
        phase = self.omega * ps_to_au(t_ps - self.t)
        return self.uz * np.cos(phase) + self.nz * np.sin(phase)


def _integrate_chunk(u, L, I, molecule, pulse, grid, n_bins, h_ps):
    def k_of_t(t_au):
        return coupling_strength(molecule, pulse, au_to_ps(t_au))

    nt = grid.size
    s2, s4 = np.zeros(nt), np.zeros(nt)
    counts = np.zeros((nt, n_bins), dtype=np.int64)
    pz0 = L[:, 2].copy()
    worst = 0.0
    n_steps = 0
    scale = n_bins / math.pi

    def record(i, z):
        z = np.clip(z, -1.0, 1.0)
        z2 = z * z
        s2[i] = float(np.sum(z2))
        s4[i] = float(np.sum(z2 * z2))
        idx = np.minimum((np.arccos(z) * scale).astype(np.int64), n_bins - 1)
        counts[i] = np.bincount(idx, minlength=n_bins)

    def check(uu, LL):
        nonlocal worst
        worst = max(
            worst,
            float(np.max(np.abs(np.einsum("ij,ij->i", uu, uu) - 1.0))),
            float(np.max(np.abs(np.einsum("ij,ij->i", uu, LL)))),
        )

    lo, hi = pulse.start_ps, pulse.stop_ps
    active = pulse.Imax_Wcm2 > 0
    t = min(grid[0], lo)
    free = _FreeAxis(u, L, I, t)
    for i, tg in enumerate(grid):
        if active and t < hi and tg > lo:
            if lo > t:
                u = free_rotation(u, L, I, ps_to_au(lo - t))
                u, L = _constrain(u, L)
                t = lo
            b = min(tg, hi)
            nsub = max(1, math.ceil((b - t) / h_ps - 1e-9))
            h = (b - t) / nsub
            u, L = advance(u, L, I, ps_to_au(t), ps_to_au(h), nsub, k_of_t)
            n_steps += nsub
            t = b
            check(u, L)
            free = _FreeAxis(u, L, I, t)
        record(i, free.z(tg))
    if grid[-1] > t:
        u = free_rotation(u, L, I, ps_to_au(grid[-1] - t))
        u, L = _constrain(u, L)
    check(u, L)
    pz_drift = float(np.max(np.abs(L[:, 2] - pz0))) if L.size else 0.0
    return s2, s4, counts, u, L, n_steps, worst, pz_drift


def integrate(ensemble: TrajectoryEnsemble, molecule: MoleculeSpec, pulse: PulseSpec, grid_ps,
              *, n_bins: int = 256, step_ps: float | None = None, chunk: int = DEFAULT_CHUNK) -> ClassicalRun:
    """Propagate every trajectory over `grid_ps`, accumulating moments and histograms.

    Trajectories are processed in fixed chunks (optionally on a thread pool
    capped by ``ROTORFLUC_THREADS``) and reduced in chunk order.
    """
    grid = np.asarray(grid_ps, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be a non-empty, strictly increasing 1-D array")
    h_ps = step_ps if step_ps is not None else default_step_ps(molecule, pulse)
    if not h_ps > 0:
        raise StepFailure(f"invalid classical step {h_ps!r}")
    I = ensemble.moment_of_inertia
    N = len(ensemble)
    bounds = [(s, min(s + chunk, N)) for s in range(0, N, chunk)]

    def work(b):
        s, e = b
        return _integrate_chunk(ensemble.u[s:e].copy(), ensemble.L[s:e].copy(), I, molecule, pulse,
                                grid, n_bins, h_ps)

    workers = min(_thread_count(), len(bounds))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]

    s2 = np.sum([p[0] for p in parts], axis=0)
    s4 = np.sum([p[1] for p in parts], axis=0)
    counts = np.sum([p[2] for p in parts], axis=0)
    final = TrajectoryEnsemble(np.concatenate([p[3] for p in parts]), np.concatenate([p[4] for p in parts]),
                               I, ensemble.seed)
    return ClassicalRun(
        times_ps=grid, sum_cos2=s2, sum_cos4=s4, counts=counts, theta_edges=np.linspace(0.0, math.pi, n_bins + 1), n_traj=N, final=final,
        step_ps=h_ps, n_steps=parts[0][5], max_constraint_error=max(p[6] for p in parts),
        max_pz_drift=max(p[7] for p in parts),
    )


def observables_from_samples(times_ps, cos_theta, n_bins: int = 256):
    """Moments and ``rho(theta, t)`` from explicit samples ``cos_theta[t, i]``."""
    z = np.clip(np.atleast_2d(np.asarray(cos_theta, dtype=float)), -1.0, 1.0)
    N = z.shape[1]
    z2 = z * z
    edges = np.linspace(0.0, math.pi, n_bins + 1)
    idx = np.minimum((np.arccos(z) * (n_bins / math.pi)).astype(np.int64), n_bins - 1)
    counts = np.stack([np.bincount(row, minlength=n_bins) for row in idx])
    return _series(np.asarray(times_ps, dtype=float), z2.sum(axis=1), (z2 * z2).sum(axis=1), counts, edges, N)


def _series(times, s2, s4, counts, edges, N):
    series = ObservableSeries.from_moments(times, s2 / N, s4 / N, "classical")
    rho = counts / (N * (edges[1] - edges[0]))
    return series, AngularDistributionSeries(edges, times, rho)


def classical_observables(run: ClassicalRun):
    """``(ObservableSeries, AngularDistributionSeries)`` of an integrated ensemble."""
    return _series(run.times_ps, run.sum_cos2, run.sum_cos4, run.counts, run.theta_edges, run.n_traj)
