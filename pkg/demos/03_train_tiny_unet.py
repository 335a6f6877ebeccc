"""
Training a small U-Net on synthetic patches
===========================================

Sample tumour and normal patches from two generated slides, train a small
numpy U-Net for a handful of epochs, and watch the loss and learning rate.
Then run tiled inference on a slide and compare against the true mask.

    python demos/03_train_tiny_unet.py
"""

import numpy as np

from nodestage.cli import shrink_slide
from nodestage.roi import tissue_mask
from nodestage.sampler import SamplerConfig, SlideSource, build_epoch
from nodestage.segnet.infer import infer_slide
from nodestage.segnet.train import TrainConfig, train
from nodestage.segnet.unet import NetConfig
from nodestage.synth import SynthProfile, generate_patient

# Coarse slides (2 um/px) so a micrometastasis spans a few hundred pixels.
profile = SynthProfile(width=1024, height=1024, mpp=2.0, stage_weights=(0, 0, 1, 0, 0))
patient = generate_patient(21, profile, patient_id="demo")
sources = []
for k, (raster, tumor) in enumerate(patient.slides[:3]):
    roi = tissue_mask(raster).tissue
    sources.append(SlideSource(f"demo_node{k}", raster, roi, tumor if tumor.bits.any() else None))

# 128 px windows reduced 4x to 32 px network inputs.
scfg = SamplerConfig(patch_px=128, out_px=32, neg_pos_ratio=3.0, seed=0)
patches = build_epoch(sources, scfg)
print(f"{len(patches)} patches, {sum(p.is_tumor for p in patches)} with tumour")

net = NetConfig(input_px=32, depth=2, base_channels=8)
res = train(patches, net, TrainConfig(epochs=12, lr_switch_epoch=10, batch_size=8, precision=32))
for e, (loss, lr) in enumerate(zip(res.epoch_loss, res.epoch_lr), 1):
    print(f"epoch {e}: loss {loss:.4f}  lr {lr:g}")

# Inference runs on the slide shrunk by the same factor as the patches.
src = next(s for s in sources if s.tumor is not None)
small, small_roi = shrink_slide(src.raster, src.roi, 4)
heat = infer_slide(res.params, small, small_roi, tile_overlap=8)
truth = src.tumor.bits[::4, ::4]
pred = heat.values >= 0.5
inter = (pred & truth).sum()
print(f"tumour pixels: true {truth.sum()}, predicted {pred.sum()}, overlap {inter}")
print(f"dice {2 * inter / max(truth.sum() + pred.sum(), 1):.3f}")
