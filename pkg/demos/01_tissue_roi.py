"""
Finding tissue on a slide
=========================

Generate one synthetic lymph-node slide, pick the tissue out of the
background with Otsu's threshold on the saturation channel, and write the
mask next to the raster so both can be opened in any image viewer.

    python demos/01_tissue_roi.py [out_dir]
"""

import sys
from pathlib import Path

from nodestage.roi import otsu_threshold, saturation_channel, tissue_mask
from nodestage.slide_store import write_mask, write_raster
from nodestage.synth import SynthProfile, generate_patient

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/roi")
out.mkdir(parents=True, exist_ok=True)

# A small slide keeps this quick; every other setting is the default.
profile = SynthProfile(width=768, height=768)
patient = generate_patient(3, profile, patient_id="demo")
raster, truth = patient.slides[0]
print(f"slide {raster.width}x{raster.height} at {raster.mpp} um/px, label {patient.true_slide_labels[0].text}")

# Background glass is nearly grey, stained tissue is not: saturation
# separates them much better than brightness does.
hist, sat = saturation_channel(raster)
t = otsu_threshold(hist)
print(f"otsu level on saturation: {t}")
print(f"pixels above it: {(sat > t).mean():.1%}")

# tissue_mask does the same and then fills holes (fat vacuoles, tears).
roi = tissue_mask(raster)
print(f"tissue after hole filling: {roi.tissue.bits.mean():.1%}")

write_raster(raster, out / "slide.ppm")
write_mask(roi.tissue, out / "tissue.pgm")
print("wrote", out / "slide.ppm", "and", out / "tissue.pgm")
