"""
Second-order resonances of the driven two-level system
=======================================================

Widths and level shifts follow from golden-rule weights and principal-value
integrals.  Both conventions are tabulated and the decay rates grow as g^2.
"""
import numpy as np

from cyclic_thermo.config import RunConfig, bundled_config_path
from cyclic_thermo import resonance_table, spectral_gap

model = RunConfig.load(bundled_config_path("strict_positivity")).model()

# one Floquet zone in each convention
for conv in ("C", "standard"):
    tab = resonance_table(model, ks=(0,), convention=conv)
    print(conv)
    for row in tab.rows():
        print(f"  j={row['j']}  E = {row['re_E']:+.6f} {row['im_E']:+.6f}i")

# the population mode relaxes at twice the golden-rule width times g^2
gs = np.array([0.05, 0.1, 0.2, 0.4])
rates = [spectral_gap(resonance_table(model, g=g), modes=(1,)) for g in gs]
print("g      decay rate   rate/g^2")
for g, r in zip(gs, rates):
    print(f"{g:<6} {r:.6e}  {r / g**2:.6f}")
