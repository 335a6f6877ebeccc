"""
From a heatmap to lesion grades
===============================

A tumour probability map becomes a list of lesions: threshold, label
8-connected regions, measure each region's largest extent, and grade it as
isolated tumour cells (<= 0.2 mm), micrometastasis (<= 2 mm) or
macrometastasis.

    python demos/02_lesion_grading.py
"""

import numpy as np

from nodestage.heatmap_post import PostConfig, extract_lesions
from nodestage.slide_store import ProbabilityMap

# Paint three blobs onto an empty 4 um/px map: 0.12 mm, 0.8 mm and 2.6 mm.
mpp = 4.0
h, w = 1000, 1000
yy, xx = np.mgrid[0:h, 0:w]
probs = np.zeros((h, w), dtype=np.float32)
for cy, cx, mm in [(100, 100, 0.12), (200, 700, 0.8), (650, 450, 2.6)]:
    r = mm * 1000 / mpp / 2
    probs[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 0.9

# Some low-level noise that the 0.5 threshold should ignore.
probs += np.random.default_rng(0).uniform(0, 0.3, probs.shape).astype(np.float32)
heatmap = ProbabilityMap(np.clip(probs, 0, 1), mpp)

for les in extract_lesions(heatmap, PostConfig(threshold=0.5)):
    print(f"{les.grade.value:>6}: {les.diameter_mm:.3f} mm across, {les.area_mm2:.4f} mm^2, "
          f"{les.pixel_count} px, mean p={les.mean_prob:.2f}")

# The diameter is the largest pixel-centre distance plus one pixel, so a
# single-pixel region measures one pixel (4 um here) rather than zero.
