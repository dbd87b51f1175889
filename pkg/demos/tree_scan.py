"""Tree-structured state space scan on a similarity graph of frame-prompt features.

Builds a kNN cosine graph, reduces it to a minimum spanning tree, and runs the
linear-time two-pass scan next to the all-pairs path walk it replaces.
"""
import time

import numpy as np

from hvpl.gtssm import (boruvka_mst, build_knn_graph, kruskal_mst, tree_scan, tree_scan_bruteforce,
                        tree_weight)

rng = np.random.default_rng(0)

# 48 feature rows, 16 dims
x = rng.normal(size=(48, 16))
g = build_knn_graph(x, phi=4)
print("graph:", g.n, "vertices,", len(g.w), "edges")

tree = boruvka_mst(g)
_, kw = kruskal_mst(g)
print("MST weight, Boruvka:", round(tree_weight(g, tree), 6), " Kruskal:", round(kw, 6))
print("tree depth:", tree.depth.max(), " levels:", len(tree.levels))
print("first ten vertices in traversal order:", tree.bto[:10])

# per-vertex decay in (0, 1) and inputs, 8 state channels
a_bar = rng.uniform(0.1, 0.9, (g.n, 8))
u = rng.normal(size=(g.n, 8))
h_fast = tree_scan(a_bar, u, tree)
h_ref = tree_scan_bruteforce(a_bar, u, tree)
print("max |fast - all pairs|:", np.abs(h_fast - h_ref).max())

# cost grows linearly for the scan, quadratically for the walk
for n in (128, 256, 512):
    xs = rng.normal(size=(n, 16))
    t = boruvka_mst(build_knn_graph(xs, 4))
    a, v = rng.uniform(0.1, 0.9, (n, 8)), rng.normal(size=(n, 8))
    t0 = time.perf_counter(); tree_scan(a, v, t); t1 = time.perf_counter()
    tree_scan_bruteforce(a, v, t); t2 = time.perf_counter()
    print(f"n={n:4d}  scan {1e3 * (t1 - t0):7.2f} ms  all pairs {1e3 * (t2 - t1):8.2f} ms")
