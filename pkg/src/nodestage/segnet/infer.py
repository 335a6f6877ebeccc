"""Whole-slide inference by overlapping tiles."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import ParameterError
from ..slide_store import BinaryMask, ProbabilityMap, SlideRaster
from .unet import NetParams, forward


def _starts(lo: int, hi: int, size: int, stride: int, limit: int) -> list[int]:
    """Tile origins covering [lo, hi) with the last tile clamped inside [0, limit)."""
    if limit <= size:
        return [0]
    first = min(lo, limit - size)
    out = []
    pos = first
    while True:
        pos = min(pos, limit - size)
        out.append(pos)
        if pos + size >= hi or pos == limit - size:
            break
        pos += stride
    return out


def tile_origins(roi: BinaryMask, tile: int, overlap: int) -> list[tuple[int, int]]:
    """(x, y) origins of tiles covering the ROI bounding box, row-major."""
    if not 0 <= overlap < tile:
        raise ParameterError(f"tile_overlap must lie in [0, {tile}), got {overlap}")
    ys, xs = np.nonzero(roi.bits)
    if len(ys) == 0:
        return []
    stride = tile - overlap
    rows = _starts(int(ys.min()), int(ys.max()) + 1, tile, stride, roi.height)
    cols = _starts(int(xs.min()), int(xs.max()) + 1, tile, stride, roi.width)
    return [(x, y) for y in rows for x in cols]


def infer_slide(params: NetParams, slide: SlideRaster, roi: BinaryMask, tile_overlap: int = 0,
                batch: int = 8, threads: int = 1) -> ProbabilityMap:
    """Stitch eval-mode tile predictions into a slide-sized probability map.

    Overlapping predictions are averaged; pixels no tile covers are 0. Tiles
    may run on several threads, but accumulation always follows tile order so
    the result does not depend on ``threads``.
    """
    if (roi.height, roi.width) != (slide.height, slide.width):
        raise ParameterError("ROI and slide dimensions differ")
    tile = params.config.input_px
    h, w = slide.height, slide.width
    pixels = slide.pixels
    if h < tile or w < tile:
        pixels = np.pad(pixels, ((0, max(tile - h, 0)), (0, max(tile - w, 0)), (0, 0)), mode="edge")
    pad_roi = np.zeros(pixels.shape[:2], dtype=bool)
    pad_roi[:h, :w] = roi.bits
    origins = tile_origins(BinaryMask(pad_roi), tile, tile_overlap)
    acc = np.zeros(pixels.shape[:2], dtype=np.float64)
    cnt = np.zeros(pixels.shape[:2], dtype=np.int32)
    if origins:
        groups = [origins[i:i + batch] for i in range(0, len(origins), batch)]

        def run(group):
            x = np.stack([pixels[y:y + tile, x0:x0 + tile] for x0, y in group]).astype(params.dtype) / 255.0
            probs, _ = forward(params, x.transpose(0, 3, 1, 2), "eval")
            return probs[:, 0]

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(run, groups))
        else:
            results = [run(g) for g in groups]
        for group, probs in zip(groups, results):
            for (x0, y), p in zip(group, probs):
                acc[y:y + tile, x0:x0 + tile] += p
                cnt[y:y + tile, x0:x0 + tile] += 1
    out = np.where(cnt > 0, acc / np.maximum(cnt, 1), 0.0)[:h, :w]
    return ProbabilityMap(np.clip(out, 0.0, 1.0).astype(np.float32), slide.mpp)
