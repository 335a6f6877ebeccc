"""Training patch extraction: tumor coverage, ROI normals, oversampling,
colour/flip augmentation and box-filter downsizing."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, SamplingInfeasibleError
from .slide_store import BinaryMask, SlideRaster


@dataclass(frozen=True)
class AugmentSpec:
    flip_h: float = 0.5
    flip_v: float = 0.5
    hue_shift_max: float = 0.04
    sat_scale_range: tuple[float, float] = (0.75, 1.25)
    val_scale_range: tuple[float, float] = (0.75, 1.25)
    rotation_enabled: bool = False

    def __post_init__(self):
        for p in (self.flip_h, self.flip_v):
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"flip probability {p} outside [0, 1]")
        if self.hue_shift_max < 0:
            raise ParameterError("hue_shift_max must be non-negative")
        for lo, hi in (self.sat_scale_range, self.val_scale_range):
            if not 0 < lo <= hi:
                raise ParameterError(f"scale range ({lo}, {hi}) must satisfy 0 < lo <= hi")
        if self.rotation_enabled:
            raise ParameterError("rotation augmentation is not supported")

    @classmethod
    def identity(cls) -> "AugmentSpec":
        return cls(0.0, 0.0, 0.0, (1.0, 1.0), (1.0, 1.0))


@dataclass(frozen=True)
class SamplerConfig:
    patch_px: int = 512
    out_px: int = 256
    neg_pos_ratio: float = 3.0
    oversample_factor: int = 2
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    seed: int = 0
    # Lattice spacing of candidate windows for normal sampling.
    normal_stride: int | None = None

    def __post_init__(self):
        if self.patch_px < 1 or self.out_px < 1 or self.patch_px % self.out_px:
            raise ParameterError(f"patch_px {self.patch_px} must be a multiple of out_px {self.out_px}")
        if not self.neg_pos_ratio > 0:
            raise ParameterError("neg_pos_ratio must be positive")
        if self.oversample_factor < 1:
            raise ParameterError("oversample_factor must be a positive integer")

    @property
    def stride_normals(self) -> int:
        return self.normal_stride or max(1, self.patch_px // 4)


@dataclass(frozen=True, eq=False)
class PatchSample:
    image: SlideRaster
    mask: BinaryMask
    origin: tuple[str, int, int]
    is_tumor: bool


@dataclass(frozen=True, eq=False)
class SlideSource:
    """One slide offered to the sampler; ``tumor`` is None for normal slides."""

    slide_id: str
    raster: SlideRaster
    roi: BinaryMask
    tumor: BinaryMask | None = None


def _grid_starts(length: int, size: int) -> list[int]:
    if length <= size:
        return [0]
    starts = list(range(0, length - size + 1, size))
    if starts[-1] + size < length:
        starts.append(length - size)
    return starts


def cover_tumor(mask: BinaryMask, cfg: SamplerConfig) -> list[tuple[int, int]]:
    """Origins (x, y) of grid windows that touch at least one tumor pixel.

    The grid has stride ``patch_px`` from (0, 0); a final row/column is
    clamped to the slide edge so windows stay in bounds.
    """
    bits = mask.bits
    if not bits.any():
        return []
    size = cfg.patch_px
    ii = _integral(bits)
    out = []
    for y in _grid_starts(mask.height, size):
        for x in _grid_starts(mask.width, size):
            if _window_sum(ii, x, y, size, mask.width, mask.height) > 0:
                out.append((x, y))
    return out


def _integral(bits: np.ndarray) -> np.ndarray:
    ii = np.zeros((bits.shape[0] + 1, bits.shape[1] + 1), dtype=np.int64)
    ii[1:, 1:] = bits.astype(np.int64).cumsum(0).cumsum(1)
    return ii


def _window_sum(ii, x, y, size, w, h):
    x1, y1 = min(x + size, w), min(y + size, h)
    return ii[y1, x1] - ii[y, x1] - ii[y1, x] + ii[y, x]


def _normal_candidates(roi: BinaryMask, tumor: BinaryMask | None, cfg: SamplerConfig) -> list[tuple[int, int]]:
    size = cfg.patch_px
    h, w = roi.height, roi.width
    stride = cfg.stride_normals
    ys = np.arange(0, max(h - size, 0) + 1, stride)
    xs = np.arange(0, max(w - size, 0) + 1, stride)
    cy = np.minimum(ys + size // 2, h - 1)
    cx = np.minimum(xs + size // 2, w - 1)
    centre_in = roi.bits[np.ix_(cy, cx)]
    if tumor is not None and tumor.bits.any():
        ii = _integral(tumor.bits)
        y1 = np.minimum(ys + size, h)
        x1 = np.minimum(xs + size, w)
        sums = ii[np.ix_(y1, x1)] - ii[np.ix_(ys, x1)] - ii[np.ix_(y1, xs)] + ii[np.ix_(ys, xs)]
        ok = centre_in & (sums == 0)
    else:
        ok = centre_in
    yy, xx = np.nonzero(ok)
    return [(int(xs[j]), int(ys[i])) for i, j in zip(yy, xx)]


def sample_normals(roi: BinaryMask, tumor: BinaryMask | None, count: int, cfg: SamplerConfig,
                   rng: np.random.Generator | None = None) -> list[tuple[int, int]]:
    """Draw ``count`` tumor-free window origins whose centre lies in the ROI."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    candidates = _normal_candidates(roi, tumor, cfg)
    if not candidates:
        raise SamplingInfeasibleError("no tumor-free window has its centre inside the ROI")
    if count <= 0:
        return []
    replace = len(candidates) < count
    if replace:
        warnings.warn(f"only {len(candidates)} normal windows for {count} draws; sampling with replacement",
                      stacklevel=2)
    picks = rng.choice(len(candidates), size=count, replace=replace)
    return [candidates[i] for i in picks]


def slide_seed(seed: int, slide_id: str) -> np.random.SeedSequence:
    digest = hashlib.sha256(slide_id.encode("utf-8")).digest()
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest[:8], "little")])


def extract(src: SlideSource, x: int, y: int, cfg: SamplerConfig) -> PatchSample:
    """Cut a patch_px window, decide tumor status, then resize to out_px."""
    size = cfg.patch_px
    img = src.raster.pixels[y:y + size, x:x + size]
    if src.tumor is not None:
        msk = src.tumor.bits[y:y + size, x:x + size]
    else:
        msk = np.zeros(img.shape[:2], dtype=bool)
    if img.shape[:2] != (size, size):
        raise ParameterError(f"window at ({x}, {y}) leaves the slide")
    patch = PatchSample(SlideRaster(img, src.raster.mpp, src.raster.magnification_tag),
                        BinaryMask(msk), (src.slide_id, x, y), bool(msk.any()))
    return resize_patch(patch, size // cfg.out_px)


def slide_windows(src: SlideSource, cfg: SamplerConfig):
    """(tumor-covering origins, tumor-free normal candidates) for one slide."""
    positives = cover_tumor(src.tumor, cfg) if src.tumor is not None else []
    return positives, _normal_candidates(src.roi, src.tumor, cfg)


def plan_from_windows(windows: dict, cfg: SamplerConfig) -> list[tuple[str, int, int, bool]]:
    """Epoch plan from ``{slide_id: (positives, candidates)}``.

    Returns (slide_id, x, y, is_tumor) tuples in the final shuffled order.
    """
    ids = sorted(windows)
    positives = [(sid, x, y) for sid in ids for x, y in windows[sid][0]]
    n = len(positives)
    if n == 0:
        raise ParameterError("no tumor-covering windows: at least one tumor slide is required")
    n_pos = n * cfg.oversample_factor
    n_neg = int(np.floor(n_pos * cfg.neg_pos_ratio + 0.5))
    sources = [sid for sid in ids if windows[sid][1]]
    if not sources:
        raise SamplingInfeasibleError("no slide offers a tumor-free window inside its ROI")
    base = int(cfg.seed) & 0xFFFFFFFFFFFFFFFF
    rng = np.random.default_rng(np.random.SeedSequence([base, 1]))
    weights = np.array([len(windows[sid][1]) for sid in sources], dtype=np.float64)
    per_slide = rng.multinomial(n_neg, weights / weights.sum())

    items = [(sid, x, y, True) for sid, x, y in positives for _ in range(cfg.oversample_factor)]
    for sid, k in zip(sources, per_slide):
        cands = windows[sid][1]
        if k == 0:
            continue
        srng = np.random.default_rng(slide_seed(cfg.seed, sid))
        picks = srng.choice(len(cands), size=int(k), replace=len(cands) < k)
        items += [(sid, *cands[i], False) for i in picks]
    items.sort()
    order = np.random.default_rng(np.random.SeedSequence([base, 2])).permutation(len(items))
    return [items[i] for i in order]


def plan_epoch(slides, cfg: SamplerConfig) -> list[tuple[str, int, int, bool]]:
    return plan_from_windows({s.slide_id: slide_windows(s, cfg) for s in slides}, cfg)


def build_epoch(slides, cfg: SamplerConfig) -> list[PatchSample]:
    """Tumor windows repeated ``oversample_factor`` times plus ratio-matched normals."""
    by_id = {s.slide_id: s for s in slides}
    cache = {}
    out = []
    for sid, x, y, _ in plan_epoch(slides, cfg):
        key = (sid, x, y)
        if key not in cache:
            cache[key] = extract(by_id[sid], x, y, cfg)
        out.append(cache[key])
    return out


# --- colour space ---------------------------------------------------------

def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """RGB in [0, 1] to HSV in [0, 1], last axis holds channels."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    v = mx
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1), 0.0)
    safe = np.where(delta > 0, delta, 1)
    h = np.where(mx == r, ((g - b) / safe) % 6.0,
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(delta > 0, h / 6.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def augment(p: PatchSample, spec: AugmentSpec, rng: np.random.Generator) -> PatchSample:
    """Random flips (image and mask alike) then HSV jitter on the image only.

    Draw order is fixed: flip_h, flip_v, hue, saturation, value.
    """
    img = p.image.pixels
    msk = p.mask.bits
    if rng.random() < spec.flip_h:
        img, msk = img[:, ::-1], msk[:, ::-1]
    if rng.random() < spec.flip_v:
        img, msk = img[::-1], msk[::-1]
    dh = rng.uniform(-spec.hue_shift_max, spec.hue_shift_max)
    ds = rng.uniform(*spec.sat_scale_range)
    dv = rng.uniform(*spec.val_scale_range)
    if dh != 0.0 or ds != 1.0 or dv != 1.0:
        hsv = rgb_to_hsv(img.astype(np.float64) / 255.0)
        hsv[..., 0] = (hsv[..., 0] + dh) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] * ds, 0.0, 1.0)
        hsv[..., 2] = np.clip(hsv[..., 2] * dv, 0.0, 1.0)
        img = np.floor(hsv_to_rgb(hsv) * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    return PatchSample(SlideRaster(img, p.image.mpp, p.image.magnification_tag), BinaryMask(msk),
                       p.origin, p.is_tumor)


# --- resizing -------------------------------------------------------------

def downsample_pixels(pixels: np.ndarray, factor: int) -> np.ndarray:
    """Box-average ``factor`` x ``factor`` blocks, rounding half up."""
    h, w = pixels.shape[:2]
    if h % factor or w % factor:
        raise ParameterError(f"{h}x{w} is not divisible by {factor}")
    blocks = pixels.reshape(h // factor, factor, w // factor, factor, *pixels.shape[2:])
    total = blocks.sum(axis=(1, 3), dtype=np.int64)
    n = factor * factor
    return ((2 * total + n) // (2 * n)).astype(pixels.dtype)


def downsample_mask(bits: np.ndarray, factor: int) -> np.ndarray:
    """Block majority: foreground when at least half the block is foreground."""
    h, w = bits.shape
    if h % factor or w % factor:
        raise ParameterError(f"{h}x{w} is not divisible by {factor}")
    counts = bits.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
    return 2 * counts >= factor * factor


def resize_patch(p: PatchSample, factor: int) -> PatchSample:
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"resize factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return p
    img = downsample_pixels(p.image.pixels, factor)
    msk = downsample_mask(p.mask.bits, factor)
    return PatchSample(SlideRaster(img, p.image.mpp * factor, p.image.magnification_tag),
                       BinaryMask(msk), p.origin, p.is_tumor)


def resize_half(p: PatchSample, out_px: int | None = None) -> PatchSample:
    """Shrink a square patch to ``out_px`` (half its size by default)."""
    size = p.image.width
    out_px = out_px or size // 2
    if size % out_px:
        raise ParameterError(f"cannot resize {size} px to {out_px} px by an integer factor")
    return resize_patch(p, size // out_px)
