import numpy as np

from rotorfluc import classical, quantum
from rotorfluc.observables import quantum_observables
from rotorfluc.pulse import MoleculeSpec, PulseSpec


def test_quantum_approaches_classical_when_many_levels_are_populated():
    """At kT >> B the two engines must agree after a kick; at 0.5 K they visibly differ."""
    pulse = PulseSpec(2e12, 0.5)
    grid = np.linspace(-1.25, 31.5, 120)

    def gap(T):
        mol = MoleculeSpec(delta_alpha_A3=3.90625, temperature_K=T)
        ens = quantum.thermal_members(mol)
        q = quantum_observables(quantum.assemble_density(quantum.propagate_ensemble(ens, mol, pulse, grid, 32)))
        c, _ = classical.classical_observables(
            classical.integrate(classical.sample_initial(mol, 100_000, 1), mol, pulse, grid))
        return np.abs(q.mean_cos2 - c.mean_cos2).max()

    cold, warm = gap(0.5), gap(2.0)
    assert warm < 0.015
    assert cold > 3 * warm
