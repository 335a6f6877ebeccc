"""Heatmap thresholding, tumor-region extraction and lesion grading."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .slide_store import BinaryMask, ProbabilityMap

ITC_MAX_MM = 0.2
MICRO_MAX_MM = 2.0
# Above this many pixels the diameter is computed on hull vertices only.
BRUTE_FORCE_LIMIT = 4096

_EIGHT = np.ones((3, 3), dtype=bool)


class Grade(str, Enum):
    ITC = "itc"
    MICRO = "micro"
    MACRO = "macro"


@dataclass(frozen=True)
class Lesion:
    pixel_count: int
    diameter_mm: float
    area_mm2: float
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 (inclusive)
    mean_prob: float
    grade: Grade | None = None


@dataclass(frozen=True)
class PostConfig:
    threshold: float = 0.5
    connectivity: int = 8
    smoothing: str = "none"

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ParameterError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.connectivity != 8:
            raise ParameterError("only 8-connectivity is supported")
        if self.smoothing not in ("none", "box3"):
            raise ParameterError(f"unknown smoothing {self.smoothing!r}")


def binarize(m: ProbabilityMap, t: float) -> BinaryMask:
    if not 0.0 < t < 1.0:
        raise ParameterError(f"threshold must lie in (0, 1), got {t}")
    return BinaryMask(m.values >= np.float32(t))


def box3_filter(m: ProbabilityMap) -> ProbabilityMap:
    """3x3 moving average with edge replication."""
    v = m.values.astype(np.float64)
    p = np.pad(v, 1, mode="edge")
    h, w = v.shape
    acc = np.zeros_like(v)
    for dy in range(3):
        for dx in range(3):
            acc += p[dy:dy + h, dx:dx + w]
    out = np.clip(acc / 9.0, 0.0, 1.0)
    return ProbabilityMap(out.astype(np.float32), m.mpp)


def connected_components(mask: BinaryMask) -> tuple[np.ndarray, int]:
    """Label 8-connected foreground regions.

    Returns ``(labels, k)``: labels are 1..k, numbered by the row-major
    position of each region's first pixel; 0 marks background.
    """
    labels, k = ndimage.label(mask.bits, structure=_EIGHT)
    if k == 0:
        return labels.astype(np.int32), 0
    # Renumber by first-pixel order so the contract does not depend on the
    # labelling backend.
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    _, first = np.unique(flat[nz], return_index=True)
    order = np.argsort(nz[first], kind="stable")
    remap = np.zeros(k + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, k + 1, dtype=np.int32)
    return remap[labels], int(k)


def _hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; collinear input yields its two end points."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))].tolist()

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1])


def _max_pairwise(points: np.ndarray) -> float:
    pts = points.astype(np.float64)
    best = 0.0
    chunk = max(1, 2_000_000 // max(len(pts), 1))
    for i in range(0, len(pts), chunk):
        d = pts[i:i + chunk, None, :] - pts[None, :, :]
        best = max(best, float(np.einsum("ijk,ijk->ij", d, d).max()))
    return float(np.sqrt(best))


def region_diameter_px(ys: np.ndarray, xs: np.ndarray) -> float:
    """Greatest pixel-center distance of a region plus one pixel of extent."""
    if len(ys) == 0:
        raise ParameterError("region is empty")
    pts = np.column_stack([xs, ys]).astype(np.int64)
    if len(pts) > BRUTE_FORCE_LIMIT:
        # Only the left- and right-most pixel of every row can be hull vertices.
        order = np.lexsort((xs, ys))
        ys_s, xs_s = ys[order], xs[order]
        starts = np.flatnonzero(np.r_[True, ys_s[1:] != ys_s[:-1]])
        ends = np.r_[starts[1:], len(ys_s)] - 1
        extremes = np.concatenate([
            np.column_stack([xs_s[starts], ys_s[starts]]),
            np.column_stack([xs_s[ends], ys_s[ends]]),
        ]).astype(np.int64)
        pts = _hull(extremes)
    return _max_pairwise(pts) + 1.0


def measure_lesion(ys, xs, mpp: float, probs=None) -> Lesion:
    """Physical size of one region given its pixel coordinates (without grade)."""
    ys = np.asarray(ys)
    xs = np.asarray(xs)
    if len(ys) == 0:
        raise ParameterError("cannot measure an empty region")
    if not mpp > 0:
        raise ParameterError(f"mpp must be positive, got {mpp}")
    n = len(ys)
    diameter = region_diameter_px(ys, xs) * mpp / 1000.0
    area = n * (mpp / 1000.0) ** 2
    bbox = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
    mean_prob = float(np.mean(probs)) if probs is not None else 0.0
    return Lesion(n, diameter, area, bbox, mean_prob)


def grade_lesion(lesion: Lesion | float) -> Grade:
    d = lesion.diameter_mm if isinstance(lesion, Lesion) else float(lesion)
    if d > MICRO_MAX_MM:
        return Grade.MACRO
    if d > ITC_MAX_MM:
        return Grade.MICRO
    return Grade.ITC


def _labelled_lesions(mask: BinaryMask, mpp: float, probs=None) -> list[tuple[int, Lesion]]:
    labels, k = connected_components(mask)
    if k == 0:
        return []
    flat = labels.ravel()
    idx = np.flatnonzero(flat)
    lab = flat[idx]
    order = np.argsort(lab, kind="stable")
    idx, lab = idx[order], lab[order]
    bounds = np.searchsorted(lab, np.arange(1, k + 2))
    w = mask.width
    pflat = probs.ravel() if probs is not None else None
    found = []
    for i in range(k):
        sel = idx[bounds[i]:bounds[i + 1]]
        ys, xs = np.divmod(sel, w)
        lesion = measure_lesion(ys, xs, mpp, pflat[sel] if pflat is not None else None)
        found.append((i + 1, _with_grade(lesion)))
    # list.sort is stable, so equal areas keep first-pixel order.
    found.sort(key=lambda item: -item[1].pixel_count)
    return found


def mask_lesions(mask: BinaryMask, mpp: float, probs: np.ndarray | None = None) -> list[Lesion]:
    """Measure and grade every component of a mask, largest area first."""
    return [lesion for _, lesion in _labelled_lesions(mask, mpp, probs)]


def _with_grade(lesion: Lesion) -> Lesion:
    return Lesion(lesion.pixel_count, lesion.diameter_mm, lesion.area_mm2, lesion.bbox,
                  lesion.mean_prob, grade_lesion(lesion))


def extract_lesions(m: ProbabilityMap, cfg: PostConfig | float = PostConfig()) -> list[Lesion]:
    if not isinstance(cfg, PostConfig):
        cfg = PostConfig(threshold=float(cfg))
    if cfg.smoothing == "box3":
        m = box3_filter(m)
    mask = binarize(m, cfg.threshold)
    return mask_lesions(mask, m.mpp, m.values)


def overlay(raster_pixels: np.ndarray, m: ProbabilityMap, cfg: PostConfig) -> np.ndarray:
    """Tint thresholded lesions by grade on a copy of same-sized RGB pixels."""
    tints = {Grade.ITC: (255, 200, 0), Grade.MICRO: (255, 110, 0), Grade.MACRO: (220, 0, 0)}
    if cfg.smoothing == "box3":
        m = box3_filter(m)
    mask = binarize(m, cfg.threshold)
    labels, _ = connected_components(mask)
    lut = np.zeros((int(labels.max()) + 1, 3), dtype=np.float64)
    for lab, lesion in _labelled_lesions(mask, m.mpp):
        lut[lab] = tints[lesion.grade]
    out = raster_pixels.astype(np.float64)
    fg = labels > 0
    out[fg] = 0.5 * out[fg] + 0.5 * lut[labels[fg]]
    return np.floor(out + 0.5).astype(np.uint8)
