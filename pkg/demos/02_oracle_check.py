"""
Covariance dynamics against the many-body oracle
================================================

Two reservoirs of four modes each plus the spin give a 512-dimensional Fock
space, small enough to propagate the density matrix directly.  The fast
path only evolves the 9x9 correlation matrix.
"""
import time

import numpy as np

from cyclic_thermo import FormFactor, ModelSpec, PeriodicEnvelope, RadialProfile, ReservoirSpec
from cyclic_thermo import discretize, simulate
from cyclic_thermo.fock import fock_trajectory

env = PeriodicEnvelope.cosine(2.0, amplitude=0.5, offset=1.0)
prof = RadialProfile("power_gaussian", power=2, scale=4.0)
model = ModelSpec(2.0, 0.7, tuple(ReservoirSpec(b, 0.0, FormFactor(env, prof)) for b in (0.5, 2.0)))
dm = discretize(model, M=4, u_max=8.0)

t = time.perf_counter()
tr = simulate(dm, 5, 64, 8, detail="all")
t_cov = time.perf_counter() - t
t = time.perf_counter()
fk = fock_trajectory(dm, 5, steps_per_cycle=64, samples_per_cycle=8)
t_fock = time.perf_counter() - t

for name in ("energies", "population", "entropy"):
    dev = np.max(np.abs(getattr(tr, name) - fk[name]))
    print(f"{name:<11} max deviation {dev:.2e}")
print(f"covariance path {t_cov:.2f} s, Fock path {t_fock:.2f} s")
