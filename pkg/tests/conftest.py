import numpy as np
import pytest

from phi4lab.lattice import PotentialSpec, assemble_hamiltonian, build_grid, eval_potential, spectral_decompose


@pytest.fixture(scope="session")
def small():
    """Power trap on a 16x16 Dirichlet grid, full decomposition."""
    grid = build_grid(2.5, 16)
    spec = PotentialSpec()
    U = eval_potential(spec, grid)
    sd = spectral_decompose(assemble_hamiltonian(grid, U, spec.kappa))
    return grid, spec, U, sd


@pytest.fixture(scope="session")
def desk():
    grid = build_grid(2.5, 24)
    spec = PotentialSpec()
    U = eval_potential(spec, grid)
    sd = spectral_decompose(assemble_hamiltonian(grid, U, spec.kappa))
    return grid, spec, U, sd


def zscore(a, b, s):
    return abs(a - b) / s if s > 0 else (0.0 if a == b else np.inf)
