"""Finite-reservoir laboratory for a periodically driven two-level system."""
from .model_spec import (AssumptionError, FormFactor, ModelSpec, PeriodicEnvelope, RadialProfile,
                         ReservoirSpec, eval_tilde_f, fermi_occupation, fourier_weight,
                         glued_weight, golden_rule_population, validate_assumptions)
from .resonances import (PVIntegrandSpec, ResonanceTable, c_liouvillean_resonances, fgr_width,
                         lamb_shift, pv_integral, resonance_table, spectral_gap,
                         standard_floquet_resonances)
from .discretization import (CovarianceState, DiscretizedModel, ModeGrid, build_mode_grid,
                             discretize, recurrence_estimate, single_particle_hamiltonian,
                             thermal_covariance)
from .dynamics import (FockState, Trajectory, entropy_production_rate, heat_flux,
                       propagate_covariance, propagate_fock_oracle, relative_entropy, simulate)

__version__ = "0.1.0"
