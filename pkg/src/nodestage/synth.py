"""Synthetic lymph-node slides with known tissue, tumor masks and labels.

Each patient gets five slides. Tissue is drawn as lumpy pink blobs with
purple nuclei on a near-white background; tumor lesions are ellipses of
violet, densely nucleated tissue. Slide labels come from measuring the
rendered lesion masks, so labels and masks cannot disagree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .heatmap_post import Grade, grade_lesion, region_diameter_px
from .labels import PNStage, SlideLabel
from .slide_store import BinaryMask, SlideRaster
from .staging import stage_patient

SLIDES_PER_PATIENT = 5

_GRADE_LABEL = {Grade.ITC: SlideLabel.ITC, Grade.MICRO: SlideLabel.MICRO, Grade.MACRO: SlideLabel.MACRO}


@dataclass(frozen=True)
class SynthProfile:
    """Geometry, lesion size ranges and texture settings for generated slides.

    ``stage_weights`` are relative frequencies of pN0, pN0(i+), pN1mi, pN1,
    pN2. ``None`` means equal weight on every stage whose lesions fit on the
    slide. ``lesion_plan`` bypasses random staging and lists, per slide, the
    lesion diameters in millimetres.
    """

    width: int = 2048
    height: int = 2048
    mpp: float = 0.5
    magnification: str = "20X"
    stage_weights: tuple[float, ...] | None = None
    itc_diameter_mm: tuple[float, float] = (0.05, 0.17)
    micro_diameter_mm: tuple[float, float] = (0.26, 0.60)
    macro_diameter_mm: tuple[float, float] = (2.2, 3.5)
    extra_itc_prob: float = 0.25
    extra_blobs: tuple[int, int] = (1, 3)
    vacuoles: tuple[int, int] = (2, 6)
    nuclei_fraction: float = 0.14
    tumor_nuclei_fraction: float = 0.35
    color_noise: float = 4.0
    lesion_plan: tuple[tuple[float, ...], ...] | None = None

    def max_lesion_px(self) -> float:
        return 0.75 * min(self.width, self.height)

    def fits(self, diameter_mm: float) -> bool:
        return diameter_mm * 1000.0 / self.mpp <= self.max_lesion_px()


@dataclass(eq=False)
class SyntheticPatient:
    patient_id: str
    slides: list[tuple[SlideRaster, BinaryMask]]
    true_slide_labels: list[SlideLabel]
    true_stage: PNStage
    tissue_masks: list[BinaryMask] = field(default_factory=list)
    lesion_diameters_mm: list[list[float]] = field(default_factory=list)


def _stage_fits(profile: SynthProfile) -> np.ndarray:
    """Whether every lesion size a stage may draw fits on the slide."""
    itc = profile.fits(profile.itc_diameter_mm[1])
    micro = itc and profile.fits(profile.micro_diameter_mm[1])
    macro = micro and profile.fits(profile.macro_diameter_mm[1])
    return np.array([True, itc, micro, macro, macro])


def _feasible_weights(profile: SynthProfile) -> np.ndarray:
    ok = _stage_fits(profile)
    if profile.stage_weights is None:
        w = ok.astype(np.float64)
        return w / w.sum()
    w = np.asarray(profile.stage_weights, dtype=np.float64)
    if w.shape != (5,) or (w < 0).any() or w.sum() <= 0:
        raise ParameterError("stage_weights must be 5 non-negative numbers with positive sum")
    bad = [PNStage(i).text for i in np.flatnonzero((w > 0) & ~ok)]
    if bad:
        raise ParameterError(
            f"lesions for stages {', '.join(bad)} do not fit on a "
            f"{profile.width}x{profile.height} slide at {profile.mpp} um/px"
        )
    return w / w.sum()


def _plan_labels(stage: PNStage, rng: np.random.Generator) -> list[SlideLabel]:
    N, I, MI, MA = SlideLabel.NEGATIVE, SlideLabel.ITC, SlideLabel.MICRO, SlideLabel.MACRO
    if stage == PNStage.PN0:
        labels = []
    elif stage == PNStage.PN0_ITC:
        labels = [I] * int(rng.integers(1, 3))
    elif stage == PNStage.PN1MI:
        labels = [MI] * int(rng.integers(1, 3)) + [I] * int(rng.integers(0, 2))
    elif stage == PNStage.PN1:
        more = int(rng.integers(0, 3))
        labels = [MA] + [MA if rng.random() < 0.3 else MI for _ in range(more)]
    else:
        more = int(rng.integers(3, 5))
        labels = [MA] + [MA if rng.random() < 0.3 else MI for _ in range(more)]
    labels = labels + [N] * (SLIDES_PER_PATIENT - len(labels))
    order = rng.permutation(SLIDES_PER_PATIENT)
    return [labels[i] for i in order]


def _diameter_range(profile: SynthProfile, label: SlideLabel) -> tuple[float, float]:
    return {
        SlideLabel.ITC: profile.itc_diameter_mm,
        SlideLabel.MICRO: profile.micro_diameter_mm,
        SlideLabel.MACRO: profile.macro_diameter_mm,
    }[label]


def _lumpy_blob(h, w, cy, cx, ry, rx, rng, bumps=5, amp=0.12):
    """Boolean mask of an ellipse whose radius wobbles with angle."""
    pad = 1.0 + amp * bumps
    y0, y1 = max(0, int(cy - ry * pad) - 1), min(h, int(cy + ry * pad) + 2)
    x0, x1 = max(0, int(cx - rx * pad) - 1), min(w, int(cx + rx * pad) + 2)
    out = np.zeros((h, w), dtype=bool)
    if y0 >= y1 or x0 >= x1:
        return out
    dy = ((np.arange(y0, y1, dtype=np.float32) + 0.5 - cy) / ry)[:, None]
    dx = ((np.arange(x0, x1, dtype=np.float32) + 0.5 - cx) / rx)[None, :]
    theta = np.arctan2(dy, dx)
    radius = np.ones_like(theta)
    for k in range(2, 2 + bumps):
        radius += amp / (k - 1) * rng.uniform(0.3, 1.0) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    out[y0:y1, x0:x1] = dx * dx + dy * dy <= radius * radius
    return out


def _ellipse(h, w, cy, cx, a, b, angle):
    """Pixels whose centers fall inside a rotated ellipse (semi-axes a >= b)."""
    y0, y1 = max(0, int(cy - a) - 1), min(h, int(cy + a) + 2)
    x0, x1 = max(0, int(cx - a) - 1), min(w, int(cx + a) + 2)
    out = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    dy, dx = yy + 0.5 - cy, xx + 0.5 - cx
    c, s = np.cos(angle), np.sin(angle)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    out[y0:y1, x0:x1] = u * u + v * v <= 1.0
    return out


def _tissue(profile: SynthProfile, rng: np.random.Generator, need_px: float) -> np.ndarray:
    h, w = profile.height, profile.width
    # Main blob is large enough to hold the biggest planned lesion.
    base = max(0.30 * min(h, w), 0.62 * need_px + 0.04 * min(h, w))
    base = min(base, 0.44 * min(h, w))
    ry = base * rng.uniform(0.95, 1.08)
    rx = base * rng.uniform(0.95, 1.08)
    cy = h / 2 + rng.uniform(-0.04, 0.04) * h
    cx = w / 2 + rng.uniform(-0.04, 0.04) * w
    tissue = _lumpy_blob(h, w, cy, cx, min(ry, 0.46 * h), min(rx, 0.46 * w), rng, amp=0.06)
    for _ in range(int(rng.integers(profile.extra_blobs[0], profile.extra_blobs[1] + 1))):
        r = rng.uniform(0.05, 0.11) * min(h, w)
        by = rng.uniform(r, h - r)
        bx = rng.uniform(r, w - r)
        tissue |= _lumpy_blob(h, w, by, bx, r * rng.uniform(0.7, 1.0), r, rng, bumps=4, amp=0.15)
    return tissue


def _place_lesions(tissue, diameters_px, rng, min_gap=6.0):
    """Return ellipse parameters (cy, cx, a, b, angle), largest first, inside tissue."""
    h, w = tissue.shape
    step = 4
    dist = ndimage.distance_transform_edt(tissue[::step, ::step]) * step
    placed = []
    for d in sorted(diameters_px, reverse=True):
        a = d / 2.0
        b = a * rng.uniform(0.6, 0.95)
        candidates = np.argwhere(dist >= a + 12)
        for _ in range(200 if len(candidates) else 0):
            cy, cx = candidates[rng.integers(len(candidates))] * step + step / 2.0
            if all(np.hypot(cy - py, cx - px) >= a + pa + min_gap for py, px, pa, _, _ in placed):
                placed.append((cy, cx, a, b, rng.uniform(0, np.pi)))
                break
        else:
            raise ParameterError(f"could not place a {d:.0f} px lesion inside the tissue")
    return placed


def _texture(h, w, rng, fraction, sigma):
    """Boolean nuclei map: the top ``fraction`` of smoothed noise at half resolution."""
    hh, hw = (h + 1) // 2, (w + 1) // 2
    field_ = ndimage.gaussian_filter(rng.standard_normal((hh, hw)).astype(np.float32), sigma)
    cut = np.quantile(field_, 1.0 - fraction)
    nuc = field_ > cut
    return np.repeat(np.repeat(nuc, 2, axis=0), 2, axis=1)[:h, :w]


def _render(profile, tissue, vac, tumor, rng):
    h, w = tissue.shape
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = (238.0, 236.0, 241.0)
    # Slow eosin intensity variation across the tissue.
    coarse = ndimage.zoom(rng.uniform(-1, 1, (9, 9)).astype(np.float32), (h / 72, w / 72), order=1)
    low = np.repeat(np.repeat(coarse, 8, axis=0), 8, axis=1)[:h, :w]
    inside = tissue & ~vac
    lo = low[inside]
    img[inside] = np.stack([228 + 6 * lo, 150 + 12 * lo, 196 + 6 * lo], axis=-1)
    nuclei = _texture(h, w, rng, profile.nuclei_fraction, 1.2) & inside
    img[nuclei] = (128.0, 72.0, 160.0)
    if tumor.any():
        tnuc = _texture(h, w, rng, profile.tumor_nuclei_fraction, 1.6)
        img[tumor] = (176.0, 118.0, 206.0)
        dense = tumor & tnuc
        img[dense] = (98.0, 60.0, 150.0)
    noise = rng.normal(0.0, profile.color_noise, (h, w, 1)).astype(np.float32)
    img += noise
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def _vacuoles(profile, tissue, avoid, rng):
    h, w = tissue.shape
    vac = np.zeros_like(tissue)
    step = 4
    dist = ndimage.distance_transform_edt((tissue & ~avoid)[::step, ::step]) * step
    count = int(rng.integers(profile.vacuoles[0], profile.vacuoles[1] + 1))
    for _ in range(count):
        r = rng.uniform(6, 22)
        candidates = np.argwhere(dist >= r + 16)
        if len(candidates) == 0:
            break
        cy, cx = candidates[rng.integers(len(candidates))] * step + step / 2.0
        vac |= _ellipse(h, w, cy, cx, r, r * rng.uniform(0.6, 1.0), rng.uniform(0, np.pi))
    return vac & tissue


def generate_slide(profile: SynthProfile, rng: np.random.Generator, diameters_mm):
    """Render one slide holding lesions of the given nominal diameters.

    Returns (raster, tumor mask, tissue mask, measured diameters in mm).
    """
    h, w = profile.height, profile.width
    px = [d * 1000.0 / profile.mpp for d in diameters_mm]
    for d, p in zip(diameters_mm, px):
        if p > profile.max_lesion_px():
            raise ParameterError(
                f"lesion of {d} mm ({p:.0f} px) is larger than a {w}x{h} slide at {profile.mpp} um/px allows"
            )
    tissue = _tissue(profile, rng, max(px, default=0.0))
    tumor = np.zeros((h, w), dtype=bool)
    measured = []
    for cy, cx, a, b, angle in _place_lesions(tissue, px, rng):
        ell = _ellipse(h, w, cy, cx, a, b, angle) & tissue
        ys, xs = np.nonzero(ell)
        measured.append(region_diameter_px(ys, xs) * profile.mpp / 1000.0)
        tumor |= ell
    grow = ndimage.binary_dilation(tumor[::4, ::4], iterations=3)
    avoid = np.repeat(np.repeat(grow, 4, axis=0), 4, axis=1)[:h, :w]
    vac = _vacuoles(profile, tissue, avoid, rng)
    pixels = _render(profile, tissue, vac, tumor, rng)
    raster = SlideRaster(pixels, profile.mpp, profile.magnification)
    return raster, BinaryMask(tumor), BinaryMask(tissue), measured


def _label_from_diameters(diameters_mm) -> SlideLabel:
    if not diameters_mm:
        return SlideLabel.NEGATIVE
    return max(_GRADE_LABEL[grade_lesion(d)] for d in diameters_mm)


def generate_patient(seed: int, profile: SynthProfile = SynthProfile(), patient_id: str | None = None) -> SyntheticPatient:
    """Build a deterministic five-slide patient from ``seed``."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    if patient_id is None:
        patient_id = f"patient_{seed}"
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    if profile.lesion_plan is not None:
        if len(profile.lesion_plan) != SLIDES_PER_PATIENT:
            raise ParameterError(f"lesion_plan must list {SLIDES_PER_PATIENT} slides")
        plans = [list(p) for p in profile.lesion_plan]
    else:
        weights = _feasible_weights(profile)
        stage = PNStage(int(rng.choice(5, p=weights)))
        plans = []
        for label in _plan_labels(stage, rng):
            if label == SlideLabel.NEGATIVE:
                plans.append([])
                continue
            lo, hi = _diameter_range(profile, label)
            lesions = [float(rng.uniform(lo, hi))]
            if label != SlideLabel.ITC and rng.random() < profile.extra_itc_prob:
                lesions.append(float(rng.uniform(*profile.itc_diameter_mm)))
            plans.append(lesions)

    slides, tissues, labels, measured_all = [], [], [], []
    for index, diameters in enumerate(plans):
        srng = np.random.default_rng(np.random.SeedSequence([seed, index + 1]))
        raster, tumor, tissue, measured = generate_slide(profile, srng, diameters)
        slides.append((raster, tumor))
        tissues.append(tissue)
        measured_all.append(measured)
        labels.append(_label_from_diameters(measured))
    stage = stage_patient(labels)
    return SyntheticPatient(patient_id, slides, labels, stage, tissues, measured_all)
