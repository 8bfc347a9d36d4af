"""Spectra and Kubo optical conductivity of interacting electrons on a nanotube ring."""
__version__ = "0.1.0"

from ._accel import USE_NUMBA, backend_name
from .conductivity import (ConductivityCurve, LineSpectrum, absorptive_sum, drude_bracket,
                           line_spectrum, lorentzian_kernel, sigma_finite_beta, sigma_leading,
                           sigma_leading_kernel_form, thermal_deviation, thermal_terms)
from .config import RunConfig, load_config
from .errors import (CapacityError, ConsistencyError, ConvergenceError, DomainError,
                     StabilityError, SwntError, ToleranceError, ValidationError)
from .kubo import (DensityMatrix, DriveSpec, KuboSystem, current_density, driven_hamiltonian,
                   finite_difference_conductivity, propagate_density,
                   time_domain_conductivity, vector_potential)
from .manybody import (HamiltonianMatrix, ModelParams, SlaterBasis, assemble_hamiltonian,
                       build_basis, momentum_operator)
from .potentials import (CylinderGeometry, PairKernelTable, PeriodicPotentialSpec,
                         periodized_coulomb, project_on_circle, v_L_eval, v_per_eval, v_r,
                         v_r_eval)
from .runner import ResultManifest, run_jobs
from .special import QuadSpec, bessel_k0, elliptic_k, quad_log_singular
from .spectral import (DipoleWeights, SpectralResult, dipole_weights, eigensolve,
                       reduced_partition, weyl_fit)
