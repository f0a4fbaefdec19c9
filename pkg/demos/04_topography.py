"""
Attention topographies
======================

``export_topography`` turns a 22-entry attention vector into a table and a
scalp map.  Here the vector is hand-made so the picture is easy to read.
"""

from pathlib import Path

import numpy as np

from advseizure.metrics import export_topography
from advseizure.montage import COORDINATES

# weights falling off with distance from T5
cx, cy = COORDINATES["T5"]
weights = np.array([np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / 0.3) for x, y in COORDINATES.values()])

out = Path("topography_demo")
topo = export_topography(weights, out, title="distance from T5")
print("highest", topo.argmax, "lowest", topo.argmin)
print(out.with_suffix(".tsv").read_text())
print("scalp map written to", out.with_suffix(".svg"))
