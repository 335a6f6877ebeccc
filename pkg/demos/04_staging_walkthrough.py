"""
Slide labels to patient stage, and how agreement is scored
==========================================================

A patient contributes five nodes. The stage depends only on how many
macro-, micro- and ITC-positive nodes there are; isolated tumour cells never
count as a positive node. Agreement between predicted and true stages is
measured with quadratically weighted kappa, so being off by one stage costs
much less than being off by four.

    python demos/04_staging_walkthrough.py
"""

import numpy as np

from nodestage.evaluate import score_patients
from nodestage.labels import PNStage, SlideLabel
from nodestage.staging import stage_patient

N, I, MI, MA = SlideLabel.NEGATIVE, SlideLabel.ITC, SlideLabel.MICRO, SlideLabel.MACRO
for nodes in ([N, N, N, N, N], [I, I, N, N, N], [MI, I, I, N, N], [MA, N, N, N, N],
              [MA, MI, MI, N, N], [MA, MA, MI, MI, N], [MA, MI, MI, I, I]):
    print(f"{' '.join(l.text for l in nodes):<40} -> {stage_patient(nodes).text}")

# Scoring: 50 random patients, then predictions that are off by one stage
# for a fifth of them versus off by the full range.
rng = np.random.default_rng(0)
stages = list(PNStage)
truth = {f"p{i:02d}": stages[rng.integers(5)] for i in range(50)}
near = {k: stages[min(s + 1, 4)] if i % 5 == 0 else s for i, (k, s) in enumerate(truth.items())}
far = {k: stages[4 - s] if i % 5 == 0 else s for i, (k, s) in enumerate(truth.items())}

for name, pred in [("near misses", near), ("far misses", far)]:
    kappa, cm = score_patients(pred, truth)
    print(f"\n{name}: kappa={kappa:.4f}")
    print(cm.to_text())
