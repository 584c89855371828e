"""
A small sweep, end to end
=========================

Write a config, run it, and aggregate the final GAP into a table with
Wilcoxon marks. Everything lands in a temporary directory.
"""

import tempfile
from pathlib import Path

from binoculars.cli import main

out = Path(tempfile.mkdtemp()) / "sweep"
config = out.parent / "sweep.txt"
config.write_text(
    f"""task = bo
function = branin, dropwave
policy = EI, 4.EI.s, Rand
repeats = 5
budget = 10
n_init = 4
fit_restarts = 3
acq_starts = 6
output_dir = {out}
"""
)

main(["run", str(config)])
main(["aggregate", str(out), "--metric", "gap"])

print((out / "manifest.txt").read_text().splitlines()[:6])
