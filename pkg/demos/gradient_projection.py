"""Orthogonal gradient projection for a frame prompt.

Feature rows of an old task span a low-rank space. Splitting its right
singular vectors at floor(xi * D) gives protected and free directions; a
projected gradient leaves the old feature rows untouched.
"""
import numpy as np

from hvpl import ogc
from hvpl.optim import Adam

rng = np.random.default_rng(1)
d = 64

# old-task features of rank 16
o = rng.normal(size=(48, 16)) @ rng.normal(size=(16, d))
space = ogc.make_space(o, xi=0.7, task=1)
print("protected directions:", space.v1.shape[1], " free directions:", space.v0.shape[1])
print("leading singular values:", np.round(space.s[:5], 2))

dp = rng.normal(size=(8, d))
star = ogc.project_gradient(dp, space)
print("|dP O^T| before:", round(np.linalg.norm(dp @ o.T), 3))
print("|dP* O^T| after:", np.linalg.norm(star @ o.T))
print("|dP* V1|:", np.linalg.norm(star @ space.v1))
print("projection is idempotent:", np.allclose(ogc.project_gradient(star, space), star, atol=1e-12))

# xi trades plasticity for stability
for xi in (0.0, 0.25, 0.5, 0.7, 0.9, 1.0):
    s = ogc.make_space(o, xi, 1)
    print(f"xi={xi:4.2f}  kept gradient norm {np.linalg.norm(ogc.project_gradient(dp, s)):.3f}")

# an Adam step taken in free-direction coordinates stays in the free span
p = rng.normal(size=(8, d))
opt = Adam(lr=1e-2)
p_new = ogc.apply_projected_update(p, star, opt, t=2, basis=space.v0)
print("applied change along protected directions:", np.linalg.norm((p_new - p) @ space.v1))
