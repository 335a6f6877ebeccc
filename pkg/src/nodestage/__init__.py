"""Lymph-node metastasis staging from whole-slide tumor heatmaps.

Stages: tissue detection, patch sampling, U-Net segmentation, lesion
post-processing, slide classification and patient pN staging, plus a
synthetic slide generator for end-to-end runs.
"""

from .errors import PipelineError
from .labels import PNStage, SlideLabel
from .slide_store import BinaryMask, ProbabilityMap, SlideRaster
from .staging import stage_patient

__all__ = ["PipelineError", "PNStage", "SlideLabel", "BinaryMask", "ProbabilityMap", "SlideRaster",
           "stage_patient"]
__version__ = "0.1.0"
