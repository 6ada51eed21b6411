"""Column smoothing and COCR fusion on hand-made inputs (no training needed).

Run:  python demos/smoothing_and_fusion.py
"""

import numpy as np

from fgocr.data import FontGroup
from fgocr.pipelines import active_groups, fuse, smooth_segments

A, F = int(FontGroup.ANTIQUA), int(FontGroup.FRAKTUR)


def show(labels, h):
    segs = smooth_segments(labels, h)
    print(f"  h={h:3d}: " + "  ".join(f"[{s.x0},{s.x1}) {s.group.label}" for s in segs))


print("A sliver of Fraktur inside an Antiqua line is absorbed:")
show([A] * 100 + [F] * 20 + [A] * 80, 32)

print("A genuine switch survives:")
show([A] * 60 + [F] * 60, 32)

rng = np.random.default_rng(0)
noisy = np.where(rng.random(300) < 0.03, F, A)
noisy[180:] = np.where(rng.random(120) < 0.03, A, F)
print("Noisy classifier output, switch at column 180:")
show(noisy, 32)

# Two recognizers that disagree about step 1; the classifier leans to group 0.
p0 = np.array([[0.9, 0.1, 0.0], [0.1, 0.8, 0.1], [0.8, 0.1, 0.1]])
p1 = np.array([[0.9, 0.05, 0.05], [0.1, 0.1, 0.8], [0.9, 0.05, 0.05]])
w = np.array([[0.7, 0.3], [0.6, 0.4], [0.95, 0.05]])
print("\nFused distributions (rows sum to 1):")
print(fuse({0: p0, 1: p1}, w).round(3))
print("Active groups at theta=0.5:", active_groups(w, 0.5))
print(fuse({0: p0, 1: p1}, w, theta=0.5).round(3))
