"""
Heat engine or refrigerator
===========================

Sweeps the hot temperature of the bundled two-temperature cycle and classifies
each point.  The engine point runs at the tight-coupling efficiency
1 - 1.5/4.5, below the Carnot value.  About two minutes on one core.
"""
import sys
import tempfile

from cyclic_thermo import cli
from cyclic_thermo.config import RunConfig, bundled_config_path

cfg = RunConfig.load(bundled_config_path("two_temperature_engine_sweep"))
out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp()
rows = cli.sweep(cfg, out)

print("beta1  regime        eta      carnot   -(b1 Q1 + b2 Q2)")
for r in rows:
    eta = "" if r["eta"] is None else f"{r['eta']:.4f}"
    print(f"{r['beta1']:<6} {r['regime']:<13} {eta:<8} {r['eta_carnot']:.4f}   {r['second_law']:.3e}")
print("manifest:", out + "/manifest.csv")
