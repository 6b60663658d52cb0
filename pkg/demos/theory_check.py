"""Evolution model of the network MSD against simulation.

White Gaussian regressors and contaminated Gaussian noise. The model
propagates the NM x NM deviation covariance using the ensemble-mean bounds
recorded by the simulation, so the two curves share their bound traces.

    python3 demos/theory_check.py [trials]
"""

import sys

from diffrls import harness
from diffrls.analysis import to_db

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 50
cfg = harness.load_config(harness.preset_path("theory-p01"), n_trials=trials)
theory, run = harness.run_theory_experiment(cfg)
sim = run["rdrls"].msd_net

print(f"{'iter':>6s}  {'simulated':>9s}  {'model':>9s}   (network MSD, dB; {trials} trials)")
for i in (0, 50, 200, 500, 1000, 1500, 2000):
    print(f"{i:6d}  {to_db(sim[i]):9.2f}  {to_db(theory.msd_net[i]):9.2f}")
