"""Raster, mask and heatmap containers plus their on-disk formats.

Rasters are binary PPM (P6) files with a ``<path>.meta`` sidecar holding the
physical resolution; masks are binary PGM (P5) files restricted to the values
0 and 255; heatmaps use a small little-endian float container (``HMAP``).
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, MetadataError, UnsupportedError, ValidationError

HMAP_MAGIC = b"HMAP"
MANIFEST_FIELDS = ["patient_id", "slide_index", "raster_path", "mask_path", "label"]


@dataclass(frozen=True, eq=False)
class SlideRaster:
    """RGB pixel grid, ``pixels`` has shape (height, width, 3) and dtype uint8."""

    pixels: np.ndarray
    mpp: float
    magnification_tag: str = ""

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValidationError(f"raster pixels must be (H, W, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValidationError("raster must be at least 1x1")
        if not self.mpp > 0:
            raise ValidationError(f"mpp must be positive, got {self.mpp}")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "mpp", float(self.mpp))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SlideRaster):
            return NotImplemented
        return (
            self.mpp == other.mpp
            and self.magnification_tag == other.magnification_tag
            and np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def empty(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Per-pixel tumor probability; values are stored as float32."""

    values: np.ndarray
    mpp: float

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 2 or v.size == 0:
            raise ValidationError(f"probability map must be non-empty 2-D, got {v.shape}")
        if np.isnan(v).any():
            raise ValidationError("probability map contains NaN")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValidationError("probability values must lie in [0, 1]")
        if not self.mpp > 0:
            raise ValidationError(f"mpp must be positive, got {self.mpp}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mpp", float(self.mpp))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ProbabilityMap):
            return NotImplemented
        return self.mpp == other.mpp and np.array_equal(
            self.values.view(np.uint32), other.values.view(np.uint32)
        )


# --- Netpbm ---------------------------------------------------------------

def _parse_netpbm(data: bytes, magic: bytes) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, offset of the first pixel byte)."""
    if data[:2] != magic:
        raise FormatError(f"expected magic {magic!r}, found {data[:2]!r}")
    tokens = []
    pos = 2
    n = len(data)
    while len(tokens) < 3:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed netpbm header")
        tokens.append(int(data[start:pos]))
    if pos >= n or not data[pos:pos + 1].isspace():
        raise FormatError("malformed netpbm header: missing separator after maxval")
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise FormatError(f"invalid netpbm size {width}x{height}")
    return width, height, maxval, pos + 1


def _netpbm_header(magic: str, width: int, height: int) -> bytes:
    return f"{magic}\n{width} {height}\n255\n".encode("ascii")


def meta_path(path) -> Path:
    return Path(str(path) + ".meta")


def read_meta(path) -> dict[str, str]:
    mp = meta_path(path)
    if not mp.exists():
        raise MetadataError(f"missing sidecar {mp}")
    meta = {}
    for line in mp.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MetadataError(f"bad sidecar line {line!r} in {mp}")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def read_raster(path) -> SlideRaster:
    path = Path(path)
    data = path.read_bytes()
    width, height, maxval, offset = _parse_netpbm(data, b"P6")
    if maxval != 255:
        raise UnsupportedError(f"maxval {maxval} not supported (only 255)")
    need = width * height * 3
    if len(data) - offset < need:
        raise FormatError(f"truncated P6: need {need} pixel bytes, found {len(data) - offset}")
    meta = read_meta(path)
    if "mpp" not in meta:
        raise MetadataError(f"sidecar for {path} lacks mpp")
    try:
        mpp = float(meta["mpp"])
    except ValueError:
        raise MetadataError(f"unparseable mpp {meta['mpp']!r}") from None
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    return SlideRaster(pixels.reshape(height, width, 3), mpp, meta.get("magnification", ""))


def write_raster(r: SlideRaster, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_netpbm_header("P6", r.width, r.height))
        fh.write(r.pixels.tobytes())
    lines = [f"mpp={r.mpp!r}"]
    if r.magnification_tag:
        lines.append(f"magnification={r.magnification_tag}")
    meta_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mask(path) -> BinaryMask:
    data = Path(path).read_bytes()
    width, height, maxval, offset = _parse_netpbm(data, b"P5")
    if maxval != 255:
        raise UnsupportedError(f"maxval {maxval} not supported (only 255)")
    need = width * height
    if len(data) - offset < need:
        raise FormatError(f"truncated P5: need {need} bytes, found {len(data) - offset}")
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    if np.any((raw != 0) & (raw != 255)):
        raise FormatError("mask bytes must be 0 or 255")
    return BinaryMask((raw == 255).reshape(height, width))


def write_mask(m: BinaryMask, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_netpbm_header("P5", m.width, m.height))
        fh.write((m.bits.astype(np.uint8) * 255).tobytes())


# --- heatmaps -------------------------------------------------------------

_HMAP_HEADER = struct.Struct("<4sIIf")


def write_heatmap(m: ProbabilityMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HMAP_HEADER.pack(HMAP_MAGIC, m.width, m.height, m.mpp))
        fh.write(m.values.astype("<f4").tobytes())


def read_heatmap(path) -> ProbabilityMap:
    data = Path(path).read_bytes()
    if len(data) < _HMAP_HEADER.size:
        raise FormatError("heatmap file shorter than its header")
    magic, width, height, mpp = _HMAP_HEADER.unpack_from(data)
    if magic != HMAP_MAGIC:
        raise FormatError(f"bad heatmap magic {magic!r}")
    if width < 1 or height < 1:
        raise FormatError(f"invalid heatmap size {width}x{height}")
    need = width * height * 4
    if len(data) - _HMAP_HEADER.size != need:
        raise FormatError(f"heatmap payload is {len(data) - _HMAP_HEADER.size} bytes, expected {need}")
    values = np.frombuffer(data, dtype="<f4", offset=_HMAP_HEADER.size).reshape(height, width)
    return ProbabilityMap(values.astype(np.float32), mpp)


# --- manifests ------------------------------------------------------------

@dataclass
class ManifestRow:
    patient_id: str
    slide_index: int
    raster_path: str
    mask_path: str
    label: str

    @property
    def slide_id(self) -> str:
        return f"{self.patient_id}_node{self.slide_index}"


def write_manifest(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in rows:
            w.writerow([r.patient_id, r.slide_index, r.raster_path, r.mask_path, r.label])


def read_manifest(path) -> list[ManifestRow]:
    """Read a patient manifest; relative paths resolve against its directory."""
    base = Path(path).parent
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise FormatError(f"manifest {path} lacks columns {sorted(missing)}")
        for rec in reader:
            rows.append(ManifestRow(
                rec["patient_id"],
                int(rec["slide_index"]),
                _resolve(base, rec["raster_path"]),
                _resolve(base, rec["mask_path"]),
                rec["label"],
            ))
    return rows


def _resolve(base: Path, p: str) -> str:
    if not p:
        return p
    return p if os.path.isabs(p) else str(base / p)
