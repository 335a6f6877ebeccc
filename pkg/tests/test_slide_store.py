import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodestage.errors import FormatError, MetadataError, UnsupportedError, ValidationError
from nodestage.slide_store import (BinaryMask, ManifestRow, ProbabilityMap, SlideRaster, read_heatmap,
                                   read_manifest, read_mask, read_raster, write_heatmap, write_manifest,
                                   write_mask, write_raster)


def test_read_two_pixel_p6(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 255, 0]))
    (tmp_path / "a.ppm.meta").write_text("mpp=0.5\n")
    r = read_raster(p)
    assert (r.width, r.height, r.mpp) == (2, 1, 0.5)
    assert r.pixels[0, 0].tolist() == [255, 0, 0]
    assert r.pixels[0, 1].tolist() == [0, 255, 0]


def test_header_comments_and_whitespace(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6 # scanner\n1\t1\n# maxval next\n255\n" + bytes([1, 2, 3]))
    (tmp_path / "c.ppm.meta").write_text("mpp=0.25\n")
    assert read_raster(p).pixels.tolist() == [[[1, 2, 3]]]


def test_one_pixel_black_layout(tmp_path):
    # "P6\n1 1\n255\n" is 11 bytes, followed by three zero bytes.
    p = tmp_path / "k.ppm"
    write_raster(SlideRaster(np.zeros((1, 1, 3), np.uint8), 0.5), p)
    data = p.read_bytes()
    assert data == b"P6\n1 1\n255\n\x00\x00\x00"
    assert len(data) == 14


def test_sidecar_line(tmp_path):
    p = tmp_path / "s.ppm"
    write_raster(SlideRaster(np.zeros((2, 2, 3), np.uint8), 0.5, "20X"), p)
    lines = (tmp_path / "s.ppm.meta").read_text().splitlines()
    assert "mpp=0.5" in lines
    assert read_raster(p).magnification_tag == "20X"


def test_truncated_raster(tmp_path):
    p = tmp_path / "t.ppm"
    p.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
    (tmp_path / "t.ppm.meta").write_text("mpp=0.5\n")
    with pytest.raises(FormatError):
        read_raster(p)


@pytest.mark.parametrize("payload", [b"P3\n1 1\n255\n000", b"P6\nx 1\n255\n000", b""])
def test_bad_headers(tmp_path, payload):
    p = tmp_path / "b.ppm"
    p.write_bytes(payload)
    (tmp_path / "b.ppm.meta").write_text("mpp=0.5\n")
    with pytest.raises(FormatError):
        read_raster(p)


def test_missing_sidecar(tmp_path):
    p = tmp_path / "m.ppm"
    p.write_bytes(b"P6\n1 1\n255\n" + bytes(3))
    with pytest.raises(MetadataError):
        read_raster(p)


def test_sixteen_bit_unsupported(tmp_path):
    p = tmp_path / "u.ppm"
    p.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    (tmp_path / "u.ppm.meta").write_text("mpp=0.5\n")
    with pytest.raises(UnsupportedError):
        read_raster(p)


def test_random_raster_round_trip(tmp_path, rng):
    r = SlideRaster(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8), 0.5)
    p = tmp_path / "r.ppm"
    write_raster(r, p)
    back = read_raster(p)
    assert back == r
    assert back.pixels.tobytes() == r.pixels.tobytes()


def test_mask_round_trip_and_bad_byte(tmp_path, rng):
    m = BinaryMask(rng.random((5, 7)) > 0.5)
    p = tmp_path / "m.pgm"
    write_mask(m, p)
    assert read_mask(p) == m
    assert set(p.read_bytes()[len(b"P5\n7 5\n255\n"):]) <= {0, 255}
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n2 1\n255\n\x00\x07")
    with pytest.raises(FormatError):
        read_mask(bad)


def test_heatmap_two_by_two(tmp_path):
    m = ProbabilityMap(np.full((2, 2), 0.5, np.float32), 0.5)
    p = tmp_path / "h.hmap"
    write_heatmap(m, p)
    data = p.read_bytes()
    # magic, width, height, mpp, then four float32 values.
    assert len(data) == 4 + 4 + 4 + 4 + 16
    assert struct.unpack_from("<4sIIf", data) == (b"HMAP", 2, 2, 0.5)
    assert read_heatmap(p) == m


def _raw_heatmap(values, mpp=0.5):
    v = np.asarray(values, dtype="<f4")
    return struct.pack("<4sIIf", b"HMAP", v.shape[1], v.shape[0], mpp) + v.tobytes()


def test_heatmap_out_of_range(tmp_path):
    p = tmp_path / "o.hmap"
    p.write_bytes(_raw_heatmap([[1.25]]))
    with pytest.raises(ValidationError):
        read_heatmap(p)


def test_heatmap_nan_and_magic(tmp_path):
    p = tmp_path / "n.hmap"
    p.write_bytes(_raw_heatmap([[np.nan, 0.1]]))
    with pytest.raises(ValidationError):
        read_heatmap(p)
    p.write_bytes(b"XMAP" + _raw_heatmap([[0.1]])[4:])
    with pytest.raises(FormatError):
        read_heatmap(p)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_heatmap_bitwise_round_trip(tmp_path_factory, h, w, seed):
    vals = np.random.default_rng(seed).random((h, w)).astype(np.float32)
    m = ProbabilityMap(vals, 0.25)
    p = tmp_path_factory.mktemp("hm") / "x.hmap"
    write_heatmap(m, p)
    assert read_heatmap(p).values.tobytes() == vals.tobytes()


def test_probability_map_rejects_out_of_range():
    with pytest.raises(ValidationError):
        ProbabilityMap(np.array([[-0.1]], np.float32), 0.5)


def test_manifest_round_trip_relative_paths(tmp_path):
    rows = [ManifestRow("p1", 0, "slides/a.ppm", "slides/a.pgm", "itc"),
            ManifestRow("p1", 1, "slides/b.ppm", "", "negative")]
    path = tmp_path / "manifest.csv"
    write_manifest(rows, path)
    assert path.read_text().splitlines()[0] == "patient_id,slide_index,raster_path,mask_path,label"
    back = read_manifest(path)
    assert back[0].raster_path == str(tmp_path / "slides/a.ppm")
    assert back[1].mask_path == ""
    assert back[0].slide_id == "p1_node0"
