"""
Batch quadrature on a Gaussian peak
===================================

Compare uncertainty sampling with a two-point log-determinant batch on a
1-D integrand whose integral is known in closed form.
"""

import numpy as np

from binoculars.benchmarks import lookup
from binoculars.policy import RunSettings, parse_policy, run_policy

obj = lookup("gausspeak", "integrate").objective
settings = RunSettings(fit_restarts=4, acq_starts=8)

for text in ("UNCT", "2.DPP.s", "Rand"):
    spec = parse_policy(text, "integrate")
    errors = [run_policy(obj, spec, 15, 2, 0, r, settings).final_metric for r in range(5)]
    print(f"{text:>8}: median fractional error {np.median(errors):.4f}")

# the error trace of a single run
rec = run_policy(obj, parse_policy("2.DPP.s", "integrate"), 15, 2, 0, 0, settings)
print(np.array2string(rec.metric_trace, precision=4))
