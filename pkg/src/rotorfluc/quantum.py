"""Thermal rotor ensembles propagated through the laser pulse.

Each thermally populated ``|J0, M0>`` is an independent pure state.  Since the
Hamiltonian conserves M and the parity of J, the propagation happens in the
``(|M|, J mod 2)`` sub-block, where ``H(t) = B J(J+1) - k(t) (cos^2 - 1/3)`` is a
real symmetric tridiagonal matrix.  All members sharing a sub-block are advanced
together as columns of one state matrix.

Inside the pulse window the state is advanced with the fourth-order
commutator-free Magnus scheme of Blanes and Moan (two exponentials of
tridiagonal matrices per step) under step-doubling error control.  Outside the
window the evolution is the exact field-free phase ``exp(-i E_J t)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisBlock, RotorLevel, cos2_operator, cos4_operator
from .pulse import MoleculeSpec, PulseSpec, coupling_strength, ps_to_au

log = logging.getLogger(__name__)

JMAX_LADDER = (8, 12, 16, 24, 32, 48, 64, 96, 128)
TOP_POPULATION_LIMIT = 1e-8

_SQ3 = math.sqrt(3.0)
_GAUSS = (0.5 - _SQ3 / 6.0, 0.5 + _SQ3 / 6.0)
_CF4_A = ((3.0 - 2.0 * _SQ3) / 12.0, (3.0 + 2.0 * _SQ3) / 12.0)


class TruncationOverflow(RuntimeError):
    """Population reached the top of the truncated basis."""


class StepFailure(RuntimeError):
    pass


class NoConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class EnsembleMember:
    initial: RotorLevel
    weight: float

    @property
    def J0(self) -> int:
        return self.initial.J

    @property
    def M0(self) -> int:
        return self.initial.M


@dataclass
class ThermalEnsemble:
    """Boltzmann-weighted initial states; iterating yields `EnsembleMember`."""

    members: list[EnsembleMember]
    coverage: float

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i):
        return self.members[i]

    @property
    def J0_max(self) -> int:
        return max(m.J0 for m in self.members)


def thermal_members(molecule: MoleculeSpec, cutoff: float = 0.999) -> ThermalEnsemble:
    """Enumerate ``|J0, M0>`` with weights ``exp(-B J0(J0+1) / kT)``.

    Levels are added in ascending J0 until the cumulative Boltzmann weight
    reaches `cutoff`, then renormalized.  ``coverage`` is the fraction of the
    full partition function that was kept.  With ``cutoff == 1`` the ladder is
    capped where a level's relative weight drops below 1e-15.
    """
    if not 0.0 < cutoff <= 1.0:
        raise ValueError("cutoff must lie in (0, 1]")
    if molecule.temperature_K == 0:
        return ThermalEnsemble([EnsembleMember(RotorLevel(0, 0), 1.0)], 1.0)

    beta_B = molecule.B / molecule.kT
    level_weights = []
    J = 0
    while True:
        w = (2 * J + 1) * math.exp(-beta_B * J * (J + 1))
        if w < 1e-15 and J > 0:
            break
        level_weights.append(w)
        J += 1
    Z = math.fsum(level_weights)
    kept, acc = [], 0.0
    for J, w in enumerate(level_weights):
        kept.append(w)
        acc += w / Z
        if acc >= cutoff:
            break
    Zk = math.fsum(kept)
    members = [
        EnsembleMember(RotorLevel(J, M), w / Zk / (2 * J + 1))
        for J, w in enumerate(kept)
        for M in range(-J, J + 1)
    ]
    return ThermalEnsemble(members, Zk / Z)


@dataclass
class WavePacket:
    block: BasisBlock
    coefficients: np.ndarray
    time_ps: float

    @property
    def norm(self) -> float:
        return float(np.vdot(self.coefficients, self.coefficients).real)


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    min_step_ps: float = math.inf
    max_step_ps: float = 0.0

    def merge(self, other: "StepStats") -> "StepStats":
        return StepStats(
            self.accepted + other.accepted,
            self.rejected + other.rejected,
            min(self.min_step_ps, other.min_step_ps),
            max(self.max_step_ps, other.max_step_ps),
        )

    def as_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "min_step_ps": self.min_step_ps if self.accepted else None,
            "max_step_ps": self.max_step_ps if self.accepted else None,
        }


@dataclass
class Trajectory:
    """Coefficients of one member over the output grid.

    ``coefficients[t, i]`` is the amplitude on ``block.levels[i]``.
    """

    member: EnsembleMember
    block: BasisBlock
    times_ps: np.ndarray
    coefficients: np.ndarray
    norm_drift: float = 0.0
    top_population: float = 0.0
    stats: StepStats = field(default_factory=StepStats)

    def packet(self, i: int) -> WavePacket:
        return WavePacket(self.block, self.coefficients[i], float(self.times_ps[i]))

    @property
    def packets(self) -> list[WavePacket]:
        return [self.packet(i) for i in range(len(self.times_ps))]

    def expectation(self, op) -> np.ndarray:
        """``<psi(t)| op |psi(t)>`` for a banded operator, over the grid."""
        return _banded_expectation(self.coefficients, op)


def _banded_expectation(c: np.ndarray, op, bands=None) -> np.ndarray:
    """Real expectation of a symmetric banded op for rows of `c` (..., dim)."""
    n = op.block.dim
    total = np.zeros(c.shape[:-1])
    for k in range(0, op.half_bandwidth + 1, 2):
        if k >= n or (bands is not None and k not in bands):
            continue
        d = op.bands[k, : n - k]
        term = np.real(np.conj(c[..., : n - k]) * c[..., k:]) @ d
        total += term if k == 0 else 2.0 * term
    return total


class StackedPropagator:
    """Propagates several ``(|M|, parity)`` sub-blocks in lockstep.

    Sub-blocks are zero-padded to a common size and stacked, so every step is
    one batched eigendecomposition.  All sub-blocks see the same k(t), so they
    share the adaptive step sequence.  Padding rows carry zero energy and no
    coupling and therefore stay empty.
    """

    def __init__(self, molecule: MoleculeSpec, pulse: PulseSpec, keys, J_max: int, rtol: float = 1e-10):
        self.molecule, self.pulse = molecule, pulse
        self.keys = list(keys)
        self.J_max = J_max
        self.rtol = rtol
        self.stats = StepStats()
        self.blocks, self.sels, self.Js = [], [], []
        for absM, parity in self.keys:
            block = BasisBlock(absM, J_max)
            J = block.J_values
            sel = np.flatnonzero(J % 2 == parity)
            self.blocks.append(block)
            self.sels.append(sel)
            self.Js.append(J[sel])
        n = max(J.size for J in self.Js)
        nb = len(self.keys)
        self.energies = np.zeros((nb, n))
        self.c2_shift = np.zeros((nb, n))
        self.c2_off = np.zeros((nb, max(n - 1, 0)))
        for b, (block, sel, J) in enumerate(zip(self.blocks, self.sels, self.Js)):
            full = cos2_operator(block).toarray()[np.ix_(sel, sel)]
            m = J.size
            self.energies[b, :m] = molecule.B * J * (J + 1.0)
            self.c2_shift[b, :m] = np.diag(full) - 1.0 / 3.0
            self.c2_off[b, : m - 1] = np.diag(full, 1)
        self._idx = np.arange(n)

    def _k(self, t_ps):
        return coupling_strength(self.molecule, self.pulse, t_ps)

    def _exp_step(self, psi, h_au, rot_weight, field_weight):
        """Apply ``exp(-i h (rot_weight E - field_weight (C - 1/3)))`` to `psi`."""
        nb, n = self.energies.shape
        H = np.zeros((nb, n, n))
        H[:, self._idx, self._idx] = h_au * (rot_weight * self.energies - field_weight * self.c2_shift)
        if n > 1:
            off = -h_au * field_weight * self.c2_off
            H[:, self._idx[:-1], self._idx[1:]] = off
            H[:, self._idx[1:], self._idx[:-1]] = off
        w, V = np.linalg.eigh(H)
        return V @ (np.exp(-1j * w)[..., None] * (np.swapaxes(V, 1, 2) @ psi))

    def _cf4(self, psi, t_ps, h_ps):
        h_au = ps_to_au(h_ps)
        k1 = self._k(t_ps + _GAUSS[0] * h_ps)
        k2 = self._k(t_ps + _GAUSS[1] * h_ps)
        a1, a2 = _CF4_A
        psi = self._exp_step(psi, h_au, 0.5, a2 * k1 + a1 * k2)
        return self._exp_step(psi, h_au, 0.5, a1 * k1 + a2 * k2)

    def free(self, psi, dt_ps):
        return np.exp(-1j * self.energies * ps_to_au(dt_ps))[..., None] * psi

    def evolve(self, psi, t0_ps, t1_ps, h_ps=None):
        """Advance stacked `psi` from `t0_ps` to `t1_ps` (either direction).

        Returns ``(psi, proposed_step_ps)``.
        """
        if t0_ps == t1_ps:
            return psi, h_ps
        forward = t1_ps > t0_ps
        lo, hi = self.pulse.start_ps, self.pulse.stop_ps
        a, b = (t0_ps, t1_ps) if forward else (t1_ps, t0_ps)
        fa, fb = max(a, lo), min(b, hi)
        if self.pulse.Imax_Wcm2 == 0 or fa >= fb:
            return self.free(psi, t1_ps - t0_ps), h_ps
        s0, s1 = (fa, fb) if forward else (fb, fa)
        psi = self.free(psi, s0 - t0_ps)
        psi, h_ps = self._adaptive(psi, s0, s1, h_ps)
        return self.free(psi, t1_ps - s1), h_ps

    def _adaptive(self, psi, t0, t1, h):
        span = abs(t1 - t0)
        sgn = 1.0 if t1 > t0 else -1.0
        if h is None:
            h = self.pulse.fwhm_ps / 50.0
        h = abs(h)
        t = t0
        while True:
            remaining = sgn * (t1 - t)
            if remaining <= 1e-15 * max(1.0, abs(t1)):
                break
            step = min(h, remaining)
            big = self._cf4(psi, t, sgn * step)
            half = self._cf4(psi, t, sgn * step / 2)
            small = self._cf4(half, t + sgn * step / 2, sgn * step / 2)
            # step doubling: the two-half-step result is kept, its error is ~|small - big| / 15
            err = float(np.max(np.abs(small - big))) / 15.0
            if err <= self.rtol:
                psi = small
                t = t1 if step == remaining else t + sgn * step
                self.stats.accepted += 1
                self.stats.min_step_ps = min(self.stats.min_step_ps, step)
                self.stats.max_step_ps = max(self.stats.max_step_ps, step)
                grow = 2.0 if err == 0 else min(2.0, 0.9 * (self.rtol / err) ** 0.2)
                # a step clipped at a sample time must not shrink the next proposal
                h = max(h, step * grow) if step < h else step * grow
            else:
                self.stats.rejected += 1
                h = step * max(0.2, 0.9 * (self.rtol / err) ** 0.2)
                if h < 1e-12 * span:
                    raise StepFailure(f"step size underflow at t={t:.6g} ps (err={err:.3g})")
        return psi, h

    def initial_state(self, columns) -> np.ndarray:
        """Stacked state with ``|J0>`` in column ``c`` of sub-block ``b`` for ``columns[b][c] = J0``."""
        nb, n = self.energies.shape
        ncol = max(len(c) for c in columns)
        psi = np.zeros((nb, n, ncol), dtype=complex)
        for b, J0s in enumerate(columns):
            for c, J0 in enumerate(J0s):
                psi[b, int(np.flatnonzero(self.Js[b] == J0)[0]), c] = 1.0
        return psi

    def run(self, columns, grid_ps) -> list[np.ndarray]:
        """Propagate the initial states in `columns` and sample on `grid_ps`.

        Returns, per sub-block, an array ``(n_t, n_cols, block.dim)`` of
        coefficients in the full M block (the other parity stays zero).
        """
        grid = np.asarray(grid_ps, dtype=float)
        psi = self.initial_state(columns)
        out = [np.zeros((grid.size, len(c), blk.dim), dtype=complex) for c, blk in zip(columns, self.blocks)]
        # initial condition is the field-free eigenstate before the pulse window
        t = min(grid[0], self.pulse.start_ps)
        h = None
        for i, tg in enumerate(grid):
            psi, h = self.evolve(psi, t, tg, h)
            t = tg
            for b, sel in enumerate(self.sels):
                out[b][i][:, sel] = psi[b, : sel.size, : len(columns[b])].T
        return out


def _check_grid(grid_ps) -> np.ndarray:
    grid = np.asarray(grid_ps, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be a non-empty, strictly increasing 1-D array")
    return grid


def _top_population(coeffs: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(coeffs[..., -2:]) ** 2, axis=-1)))


def propagate(member: EnsembleMember, molecule: MoleculeSpec, pulse: PulseSpec, grid_ps, J_max: int,
              *, rtol: float = 1e-10, check_truncation: bool = True) -> Trajectory:
    """Solve the TDSE for one initial state ``|J0, M0>`` and sample on `grid_ps`."""
    grid = _check_grid(grid_ps)
    if J_max < member.J0 + 2:
        raise ValueError(f"J_max={J_max} leaves no room above J0={member.J0}")
    prop = StackedPropagator(molecule, pulse, [(abs(member.M0), member.J0 % 2)], J_max, rtol)
    coeffs = prop.run([[member.J0]], grid)[0][:, 0, :]
    traj = Trajectory(
        member, BasisBlock(member.M0, J_max), grid, coeffs,
        norm_drift=float(np.max(np.abs(np.sum(np.abs(coeffs) ** 2, axis=1) - 1.0))),
        top_population=_top_population(coeffs),
        stats=prop.stats,
    )
    if check_truncation and traj.top_population > TOP_POPULATION_LIMIT:
        raise TruncationOverflow(
            f"population {traj.top_population:.3g} at the top of J_max={J_max}; retry with a larger basis"
        )
    return traj


def propagate_ensemble(members, molecule: MoleculeSpec, pulse: PulseSpec, grid_ps, J_max: int,
                       *, rtol: float = 1e-10, check_truncation: bool = True) -> list[Trajectory]:
    """Propagate every member, sharing work between members of one sub-block.

    ``+M0`` and ``-M0`` obey identical equations, so each ``(|M0|, parity)``
    sub-block is solved once and its columns are reused for both signs.
    """
    grid = _check_grid(grid_ps)
    members = list(members)
    groups: dict[tuple[int, int], list[int]] = {}
    for m in members:
        groups.setdefault((abs(m.M0), m.J0 % 2), [])
        if m.J0 not in groups[(abs(m.M0), m.J0 % 2)]:
            groups[(abs(m.M0), m.J0 % 2)].append(m.J0)
    keys = sorted(groups)
    if J_max < max(m.J0 for m in members) + 2:
        raise ValueError(f"J_max={J_max} leaves no room above the highest J0")

    prop = StackedPropagator(molecule, pulse, keys, J_max, rtol)
    out = prop.run([groups[k] for k in keys], grid)
    results = {k: (o, prop.stats) for k, o in zip(keys, out)}

    trajectories = []
    for m in members:
        key = (abs(m.M0), m.J0 % 2)
        block_coeffs, stats = results[key]
        coeffs = block_coeffs[:, groups[key].index(m.J0), :]
        trajectories.append(Trajectory(
            m, BasisBlock(m.M0, J_max), grid, coeffs,
            norm_drift=float(np.max(np.abs(np.sum(np.abs(coeffs) ** 2, axis=1) - 1.0))),
            top_population=_top_population(coeffs),
            stats=stats,
        ))
    if check_truncation:
        worst = max(t.top_population for t in trajectories)
        if worst > TOP_POPULATION_LIMIT:
            raise TruncationOverflow(
                f"population {worst:.3g} at the top of J_max={J_max}; retry with a larger basis"
            )
    return trajectories


@dataclass
class DensityBlockSeries:
    """Ensemble density matrix over time, one Hermitian matrix per M block.

    The matrix is kept in factored form: ``rho_M(t) = sum_m w_m c_m(t) c_m(t)^H``
    over the members with ``M0 == M``.  `matrix` materializes it for one time.
    """

    times_ps: np.ndarray
    J_max: int
    blocks: dict[int, tuple[np.ndarray, np.ndarray]]  # M -> (weights, coeffs[n_t, n_mem, dim])

    @property
    def M_values(self) -> list[int]:
        return sorted(self.blocks)

    def block(self, M: int) -> BasisBlock:
        return BasisBlock(M, self.J_max)

    def matrix(self, M: int, time_index: int) -> np.ndarray:
        w, c = self.blocks[M]
        ct = c[time_index]
        return (ct.T * w) @ ct.conj()

    def trace(self) -> np.ndarray:
        total = np.zeros(self.times_ps.size)
        for w, c in self.blocks.values():
            total += np.sum(np.abs(c) ** 2, axis=2) @ w
        return total

    def expectation(self, op_factory, bands=None) -> np.ndarray:
        """``sum_M Tr[rho_M(t) O_M]`` for ``O_M = op_factory(block)``.

        `bands` restricts the trace to pairs with ``|J - J'|`` in `bands`.
        """
        total = np.zeros(self.times_ps.size)
        for M, (w, c) in self.blocks.items():
            op = op_factory(self.block(M))
            total += _banded_expectation(c, op, bands) @ w
        return total


def assemble_density(trajectories: list[Trajectory]) -> DensityBlockSeries:
    if not trajectories:
        raise ValueError("no trajectories")
    grid = trajectories[0].times_ps
    J_max = trajectories[0].block.J_max
    for t in trajectories:
        if t.times_ps.shape != grid.shape or not np.array_equal(t.times_ps, grid):
            raise ValueError("grid mismatch between trajectories")
        if t.block.J_max != J_max:
            raise ValueError("J_max mismatch between trajectories")
    by_M: dict[int, list[Trajectory]] = {}
    for t in trajectories:
        by_M.setdefault(t.member.M0, []).append(t)
    blocks = {}
    for M, ts in sorted(by_M.items()):
        w = np.array([t.member.weight for t in ts])
        c = np.stack([t.coefficients for t in ts], axis=1)
        blocks[M] = (w, c)
    return DensityBlockSeries(grid, J_max, blocks)


def _peaks(trajectories) -> tuple[float, float]:
    rho = assemble_density(trajectories)
    m2 = rho.expectation(cos2_operator)
    m4 = rho.expectation(cos4_operator)
    delta = np.sqrt(np.maximum(m4 - m2 * m2, 0.0))
    return float(m2.max()), float(delta.max())


def _converge(solve, rungs, tol):
    if tol <= 0:
        raise NoConvergence("tolerance must be positive to be reachable")
    prev = None
    for r in rungs:
        trajs = solve(r)
        ok_top = max(t.top_population for t in trajs) < TOP_POPULATION_LIMIT
        cur = (_peaks(trajs), ok_top)
        if prev is not None:
            (p_prev, top_prev), (p_cur, _) = prev[1], cur
            if top_prev and all(abs(a - b) < tol for a, b in zip(p_prev, p_cur)):
                return prev[0]
        prev = (r, cur)
    raise NoConvergence(f"J_max ladder exhausted at {rungs[-1] if rungs else None} without reaching tol={tol}")


def converge_jmax(member: EnsembleMember, molecule: MoleculeSpec, pulse: PulseSpec, grid_ps,
                  tol: float = 1e-4, *, margin: int = 4, ladder=JMAX_LADDER) -> int:
    """Smallest ladder rung whose peak <cos^2> and peak delta agree with the next rung to `tol`."""
    rungs = [r for r in ladder if r >= member.J0 + margin]
    return _converge(
        lambda r: [propagate(member, molecule, pulse, grid_ps, r, check_truncation=False)], rungs, tol
    )


def converge_ensemble_jmax(members, molecule: MoleculeSpec, pulse: PulseSpec, grid_ps,
                           tol: float = 1e-4, *, margin: int = 4, ladder=JMAX_LADDER, start: int = 0) -> int:
    """Like `converge_jmax`, judged on the ensemble-averaged peaks."""
    members = list(members)
    J0max = max(m.J0 for m in members)
    rungs = [r for r in ladder if r >= max(J0max + margin, start)]
    return _converge(
        lambda r: propagate_ensemble(members, molecule, pulse, grid_ps, r, check_truncation=False), rungs, tol
    )
