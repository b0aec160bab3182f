"""Sweep coreset fractions through the grid runner, then export plot data from one run.

Run: python demos/grid_and_exports.py [output dir]   (defaults to a temp dir)
"""

import sys
import tempfile
from pathlib import Path

from dietcl.commands import cmd_grid, export
from dietcl.config import parse_config_text

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="dietcl-"))
text = f"""
learner.kind = er
dataset.kind = gaussian
dataset.train_per_class = 60
protocol.e = 20
coreset.method = graphcut
grid.methods = random, graphcut
grid.fractions = 0.1, 0.2, 0.5, full
grid.seeds = 0, 1, 2
grid.workers = 2
output.dir = {root}
"""
cmd_grid(parse_config_text(text))
grid_dir = next(root.glob("grid-*"))
print((grid_dir / "summary.csv").read_text())

run_dir = next((grid_dir / "runs").iterdir())
for kind in ("accuracy-heatmap", "weight-deltas", "pca"):
    rows = export(run_dir, kind).splitlines()
    print(f"{kind}: {len(rows) - 1} rows, header {rows[0]}")
