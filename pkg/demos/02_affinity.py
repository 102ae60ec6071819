"""
Pixel affinities from boundaries and class scores
=================================================

Two pixels are similar when no strong boundary lies on the straight line
between them, and when the classifier gives them the same hard label with
close confidence. Each pixel is linked to a random tenth of its radius-20 disk.
"""

import numpy as np

from bnf.affinity import AffinityConfig, boundary_affinity, build_graph, line_pixels, max_crossing
from bnf.core import BoundaryMap
from bnf.synth import SceneSpec, generate_scene

# A wall down the middle of a small image.
v = np.zeros((5, 9))
v[:, 4] = 0.8
b = BoundaryMap(v)

print("raster from (2,0) to (2,8):", line_pixels((2, 0), (2, 8)))
print("max crossing:", max_crossing(b, (2, 0), (2, 8)))
print("same side:   w_sb = %.4f" % boundary_affinity(b, (0, 0), (4, 3), 0.1))
print("across wall: w_sb = %.2e" % boundary_affinity(b, (2, 0), (2, 8), 0.1))

# The full graph on a synthetic scene.
scene = generate_scene(SceneSpec(seed=3))
cfg = AffinityConfig()
g = build_graph(scene.boundary, scene.unary, cfg)
print()
print("graph:", g.stats())

# Edges within one true region should be much stronger than edges across regions.
i, j, w = g.entries()
lab = scene.truth.labels.ravel()
same = lab[i] == lab[j]
print("mean weight within regions %.3f, across %.3f" % (w[same].mean(), w[~same].mean()))
