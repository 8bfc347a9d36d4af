import numpy as np
import pytest

from swnt_kubo import (CylinderGeometry, ModelParams, PairKernelTable, PeriodicPotentialSpec,
                       assemble_hamiltonian, build_basis, momentum_operator)
from swnt_kubo.spectral import spectrum_for_conductivity

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k.split("-")[1])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


class Model:
    """Everything derived from one ModelParams, built once per session."""

    def __init__(self, params, sector=None):
        self.params = params
        self.geometry = params.geometry
        self.table = PairKernelTable.build(params.geometry, 2 * params.M_modes)
        self.basis = build_basis(params, sector)
        self.H = assemble_hamiltonian(params, self.basis, self.table)
        self.P = momentum_operator(self.basis, params.geometry)
        self.res, self.weights = spectrum_for_conductivity(self.H, self.P)

    @property
    def mu(self):
        return self.res.eigenvalues


def make_model(r=0.2, a=1.0, L=4, N=2, lam=1.0, harmonics=None, M=6, sector=None):
    geom = CylinderGeometry(r=r, a=a, L=L)
    params = ModelParams(geom, N=N, lam=lam, v_per=PeriodicPotentialSpec(harmonics or {}),
                         M_modes=M)
    return Model(params, sector)


@pytest.fixture(scope="session")
def reference():
    """r=0.2, a=1, L=4, N=2, lambda=1, v_per=0.5 cos(2 pi x), M_modes=6."""
    return make_model(harmonics={1: 0.5})


@pytest.fixture(scope="session")
def free_n2():
    return make_model(N=2, lam=0.0, M=4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
