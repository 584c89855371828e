"""
Myopic, batch and two-step choices on a 1-D toy posterior
==========================================================

Zeros are observed at both ends of [-1, 1]. Plain EI picks the middle,
a two-point batch spreads out symmetrically, and two-step EI avoids the
middle because it wants to keep a good follow-up available.
"""

import numpy as np

from binoculars.demo1d import demo_curves

curves = demo_curves(seed=0)

print(f"EI choice           {curves.ei_choice:+.3f}")
print(f"2-point batch       {curves.qei_pair[0]:+.3f} {curves.qei_pair[1]:+.3f}")
print(f"two-step EI choice  {curves.two_step_choice:+.3f}")

# the two-step value at the centre is below its best, unlike EI
centre = len(curves.grid) // 2
print("two-step EI at 0 vs max:", curves.two_step[centre], curves.two_step.max())

# coarse text plot of the three curves, each stretched to its own range
for name, values in (("ei", curves.ei), ("qei2", curves.qei_slice), ("2-step", curves.two_step)):
    row = values[::20]
    row = (row - row.min()) / np.ptp(row)
    print(f"{name:>7} " + "".join(" .:-=+*#%@"[int(v * 9)] for v in np.clip(row, 0, 1)))
