"""Tissue region-of-interest detection: Otsu threshold plus hole filling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .errors import DegenerateHistogramError
from .slide_store import BinaryMask, SlideRaster

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class RoiResult:
    tissue: BinaryMask
    otsu_level: int
    channel: str
    blank: bool = False


def otsu_threshold(counts) -> int:
    """Threshold t maximising between-class variance, class 0 being bins <= t.

    Ties resolve to the smallest t.
    """
    h = np.asarray(counts, dtype=np.float64)
    if h.shape != (256,):
        raise ValueError(f"histogram must have 256 bins, got shape {h.shape}")
    if (h < 0).any():
        raise ValueError("histogram counts must be non-negative")
    if np.count_nonzero(h) < 2:
        raise DegenerateHistogramError("need at least two non-empty bins")
    total = h.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(h)[:255]
    s0 = np.cumsum(h * levels)[:255]
    w1 = total - w0
    s1 = (h * levels).sum() - s0
    valid = (w0 > 0) & (w1 > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        # w0*w1*(mu0-mu1)^2 up to the constant 1/total^2, without class means.
        num = s0 * w1 - s1 * w0
        score = np.where(valid, num * num / (w0 * w1), -1.0)
    best = score.max()
    near = np.flatnonzero(valid & (score >= best * (1 - 1e-9)))
    if len(near) == 1:
        return int(near[0])
    # Mathematically tied candidates can differ in the last ulp; settle them
    # exactly so the smallest tied threshold wins.
    hq = [Fraction(float(c)) for c in h]
    a_pre, b_pre = [Fraction(0)], [Fraction(0)]
    for i, c in enumerate(hq):
        a_pre.append(a_pre[-1] + c)
        b_pre.append(b_pre[-1] + c * i)
    exact = {}
    for t in near:
        a0, b0 = a_pre[t + 1], b_pre[t + 1]
        a1, b1 = a_pre[256] - a0, b_pre[256] - b0
        exact[int(t)] = (b0 * a1 - b1 * a0) ** 2 / (a0 * a1)
    top = max(exact.values())
    return min(t for t, v in exact.items() if v == top)


def saturation_channel(r: SlideRaster) -> tuple[np.ndarray, np.ndarray]:
    """Return (256-bin histogram, per-pixel quantised saturation)."""
    px = r.pixels.astype(np.int32)
    mx = px.max(axis=2)
    mn = px.min(axis=2)
    # round((mx-mn)/mx * 255) with half-up rounding, in exact integer arithmetic.
    num = (mx - mn) * 510 + mx
    sat = np.where(mx > 0, num // np.maximum(2 * mx, 1), 0).astype(np.uint8)
    hist = np.bincount(sat.ravel(), minlength=256).astype(np.int64)
    return hist, sat


def grayscale_channel(r: SlideRaster) -> tuple[np.ndarray, np.ndarray]:
    """Inverted luminance, so that dark tissue maps to high values like saturation."""
    px = r.pixels.astype(np.float64)
    lum = 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]
    inv = (255 - np.floor(lum + 0.5)).astype(np.uint8)
    hist = np.bincount(inv.ravel(), minlength=256).astype(np.int64)
    return hist, inv


def fill_holes(fg: np.ndarray) -> np.ndarray:
    """Flip every 4-connected background component not touching the border."""
    bg_labels, _ = ndimage.label(~fg, structure=_FOUR)
    border = np.unique(np.concatenate([
        bg_labels[0, :], bg_labels[-1, :], bg_labels[:, 0], bg_labels[:, -1],
    ]))
    keep_bg = np.isin(bg_labels, border[border > 0])
    return fg | (~keep_bg & (bg_labels > 0))


def tissue_mask(r: SlideRaster, channel: str = "saturation") -> RoiResult:
    if channel == "saturation":
        hist, grid = saturation_channel(r)
    elif channel == "grayscale":
        hist, grid = grayscale_channel(r)
    else:
        raise ValueError(f"unknown channel {channel!r}")
    try:
        level = otsu_threshold(hist)
    except DegenerateHistogramError:
        warnings.warn("blank slide: histogram has a single populated bin", stacklevel=2)
        return RoiResult(BinaryMask.empty(r.height, r.width), 0, channel, blank=True)
    fg = grid > level
    return RoiResult(BinaryMask(fill_holes(fg)), level, channel)
