"""Self-checks against independent references (quadrature, reversibility, conservation laws)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import sph_harm_y

from .basis import BasisBlock, cos2_operator, cos4_operator
from .pulse import MoleculeSpec, PulseSpec, coupling_strength, ps_to_au


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tol

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: error {self.error:.3e} (tol {self.tol:.0e})"


def quadrature_matrix(power: int, M: int, J_max: int, n_nodes: int = 64) -> np.ndarray:
    """``<J'M| cos^power |JM>`` for ``|M| <= J, J' <= J_max`` by Gauss-Legendre in ``cos(theta)``."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    theta = np.arccos(x)
    Js = range(abs(M), J_max + 1)
    Y = np.stack([np.real(sph_harm_y(J, M, theta, 0.0)) for J in Js])
    return 2.0 * math.pi * (Y * (w * x**power)) @ Y.T


def check_matrix_elements(J_max: int = 12) -> CheckResult:
    err = 0.0
    for M in range(-J_max, J_max + 1):
        block = BasisBlock(M, J_max)
        for power, op in ((2, cos2_operator), (4, cos4_operator)):
            err = max(err, float(np.max(np.abs(op(block).toarray() - quadrature_matrix(power, M, J_max)))))
    return CheckResult("matrix-elements", err, 1e-10)


_MOL = MoleculeSpec(delta_alpha_A3=4.0, temperature_K=0.5)
_PULSE = PulseSpec(2e12, 0.5)


def _packet_propagator(J_max: int = 32):
    from .quantum import StackedPropagator

    prop = StackedPropagator(_MOL, _PULSE, [(0, 0), (1, 1), (2, 0)], J_max)
    psi = prop.initial_state([[0, 2], [1, 3], [2]])
    return prop, psi


def check_unitarity() -> CheckResult:
    prop, psi = _packet_propagator()
    out, _ = prop.evolve(psi, _PULSE.start_ps, _PULSE.stop_ps + 1.0)
    norms = np.sum(np.abs(out) ** 2, axis=1)[psi.sum(axis=1) != 0]
    return CheckResult("unitarity", float(np.max(np.abs(norms - 1.0))), 1e-8)


def check_time_reversal() -> CheckResult:
    prop, psi = _packet_propagator()
    t0, t1 = _PULSE.start_ps - 1.0, _PULSE.stop_ps + 1.0
    fwd, _ = prop.evolve(psi, t0, t1)
    back, _ = prop.evolve(fwd, t1, t0)
    return CheckResult("time-reversal", float(np.max(np.abs(back - psi))), 1e-6)


def check_classical_conservation(n: int = 2000, steps: int = 2000) -> list[CheckResult]:
    from .classical import advance, sample_initial

    ens = sample_initial(_MOL, n, seed=7)
    I = ens.moment_of_inertia
    k = float(coupling_strength(_MOL, _PULSE, _PULSE.center_ps))
    h = ps_to_au(0.002)
    E0 = ens.energy(k)
    u, L = advance(ens.u.copy(), ens.L.copy(), I, 0.0, h, steps, lambda t: np.full_like(t, k))
    after = type(ens)(u, L, I, ens.seed)
    scale = np.maximum(np.abs(E0), k)
    constraint = max(float(np.max(np.abs(np.einsum("ij,ij->i", u, u) - 1.0))),
                     float(np.max(np.abs(np.einsum("ij,ij->i", u, L)))))
    return [
        CheckResult("classical-energy", float(np.max(np.abs(after.energy(k) - E0) / scale)), 1e-6),
        CheckResult("classical-constraints", constraint, 1e-10),
        CheckResult("classical-pz", float(np.max(np.abs(L[:, 2] - ens.L[:, 2]))), 1e-10),
    ]


CHECKS = {
    "matrix-elements": lambda: [check_matrix_elements()],
    "unitarity": lambda: [check_unitarity()],
    "time-reversal": lambda: [check_time_reversal()],
    "classical": check_classical_conservation,
}


def run_checks(name: str = "all") -> list[CheckResult]:
    names = list(CHECKS) if name == "all" else [name]
    return [r for n in names for r in CHECKS[n]()]
