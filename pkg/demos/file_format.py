"""Arrays on disk as HVPL-MAT records."""
import os
import tempfile

import numpy as np

from hvpl import matio

a = np.arange(12, dtype=float).reshape(3, 4) / 7
b = np.linspace(0, 1, 5)

path = os.path.join(tempfile.mkdtemp(), "pair.hvpl")
matio.save(path, a, b)
for h in matio.headers(path):
    print(h)

a2, b2 = matio.read_all(path)
print("f8 round trip is bitwise:", np.array_equal(a, a2) and np.array_equal(b, b2))

matio.save(path, a, dtype="f4")
print("f4 max error:", np.abs(matio.load(path) - a).max())
