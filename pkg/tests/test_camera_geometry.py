import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plenopress.camera_geometry import (
    CameraSpec,
    PixelClass,
    center_pixel,
    classify_pixels,
    crop_squares_overlap,
    derive_centers,
    dump_spec,
    lattice_lenses,
    load_spec,
    min_crop_size,
    save_spec,
    spec_from_kv,
    parse_kv,
)


def test_centers_two_by_two():
    spec = CameraSpec(200, 200, 35.0, 0.8, (35, 35), 2, 2, 60.62, 70.0, 35.0)
    got = [(r, c, round(x, 6), round(y, 6)) for r, c, x, y in derive_centers(spec)]
    assert got == [(0, 0, 35.0, 35.0), (0, 1, 95.62, 70.0), (1, 0, 35.0, 105.0), (1, 1, 95.62, 140.0)]


def test_single_lens_center_is_origin():
    spec = CameraSpec(100, 100, 20.0, 0.8, (50.5, 49.0), 1, 1)
    assert derive_centers(spec) == [(0, 0, 50.5, 49.0)]


def test_canonical_centers(tspc):
    centers = derive_centers(tspc)
    assert len(centers) == 66 * 42 == 2772
    R = tspc.microlens_radius_R
    xs = np.array([c[2] for c in centers])
    ys = np.array([c[3] for c in centers])
    assert xs.min() >= R and ys.min() >= R
    assert xs.max() <= tspc.sensor_width - R and ys.max() <= tspc.sensor_height - R


def test_canonical_table_values(tspc):
    assert (tspc.sensor_width, tspc.sensor_height) == (4080, 3068)
    assert (tspc.complete_cols, tspc.complete_rows) == (66, 42)
    assert tspc.microlens_radius_R == 35.0
    assert tspc.nominal_diameter == 69.0


def test_pitch_defaults():
    spec = CameraSpec(500, 500, 10.0, 0.8, (20, 20), 3, 3)
    assert spec.hex_horizontal_pitch == pytest.approx(math.sqrt(3) * 10)
    assert spec.hex_vertical_pitch == 20.0
    assert spec.column_offset == 10.0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(microlens_radius_R=0.0),
        dict(epa_coefficient_m=0.0),
        dict(epa_coefficient_m=1.2),
        dict(grid_origin=(5.0, 40.0)),
        dict(complete_cols=20),
    ],
)
def test_invalid_specs_rejected(kwargs):
    base = dict(
        sensor_width=300, sensor_height=300, microlens_radius_R=20.0, epa_coefficient_m=0.8,
        grid_origin=(30.0, 30.0), complete_cols=3, complete_rows=3,
    )
    base.update(kwargs)
    with pytest.raises(ValueError):
        CameraSpec(**base)


@pytest.mark.parametrize(
    "m,R,expected",
    [(0.8, 35, 39.5980), (1.0, 1.0, 1.41421), (0.5, 100, 70.7107)],
)
def test_min_crop_size(m, R, expected):
    assert min_crop_size(m, R) == pytest.approx(expected, abs=1e-4)


@pytest.mark.parametrize("m,R", [(0.8, 0), (0.8, -1), (0.0, 10), (1.5, 10)])
def test_min_crop_size_domain(m, R):
    with pytest.raises(ValueError):
        min_crop_size(m, R)


@pytest.mark.parametrize("coord,expected", [(10.5, 10), (10.51, 11), (10.49, 10), (11.0, 11), (9.5, 9)])
def test_center_pixel_rounds_half_down(coord, expected):
    assert center_pixel(coord) == expected


@pytest.mark.parametrize("d", [40, 48, 60])
def test_center_pixel_sits_at_half_d_in_window(d):
    for coord in (97.93803201339642, 102.25, 10.5, 33.0):
        top_left = math.ceil(coord - d / 2 - 0.5)
        assert center_pixel(coord) == top_left + d // 2


def _periodic_spec(R, cols, rows, pad_cols=3, pad_rows=3):
    hp, vp = math.sqrt(3) * R, 2 * R
    ox, oy = pad_cols * hp + R, pad_rows * vp + R
    W = math.ceil(ox + (cols + pad_cols - 1) * hp + R)
    H = math.ceil(oy + (rows + pad_rows) * vp + R)
    return CameraSpec(W, H, float(R), 0.8, (ox, oy), cols, rows)


def test_inter_fraction_tends_to_hex_constant():
    R = 200
    spec = _periodic_spec(R, 4, 3)
    cm = classify_pixels(spec, 2 * R / math.sqrt(2) * 0.8)
    hp, vp = spec.hex_horizontal_pitch, spec.hex_vertical_pitch
    ox, oy = spec.grid_origin
    # two columns by one row is a whole period of the lattice
    frac = cm.fraction_in(PixelClass.INTER_MICROIMAGE, ox, ox + 2 * hp, oy, oy + 2 * vp)
    expected = 1 - math.pi / (2 * math.sqrt(3))
    assert frac == pytest.approx(expected, rel=2e-3)


def test_single_lens_full_disc_no_vignetting_in_square():
    spec = CameraSpec(80, 80, 30.0, 1.0, (40.0, 40.0), 1, 1)
    d = 2 * 30 / math.sqrt(2)
    cm = classify_pixels(spec, d)
    dy = np.arange(80)[:, None] + 0.5 - 40
    dx = np.arange(80)[None, :] + 0.5 - 40
    square = (np.abs(dx) < d / 2) & (np.abs(dy) < d / 2)
    assert not np.any(cm.labels[square] == PixelClass.VIGNETTING)


def test_crop_overlap_reported(small_spec):
    assert not crop_squares_overlap(small_spec, 48)
    with pytest.raises(ValueError):
        classify_pixels(small_spec, 68)


def test_d_above_2r_rejected(small_spec):
    with pytest.raises(ValueError):
        classify_pixels(small_spec, 71)


def _small_random_spec(draw_R, m, cols, rows, jitter):
    R = float(draw_R)
    hp, vp = math.sqrt(3) * R, 2 * R
    ox, oy = 1.5 * R + jitter, 1.5 * R + jitter / 2
    W = math.ceil(ox + (cols - 1) * hp + 1.5 * R)
    H = math.ceil(oy + rows * vp + 1.5 * R)
    return CameraSpec(W, H, R, m, (ox, oy), cols, rows)


@settings(max_examples=25, deadline=None)
@given(
    R=st.integers(6, 20),
    m=st.floats(0.5, 1.0),
    cols=st.integers(1, 4),
    rows=st.integers(1, 4),
    jitter=st.floats(0.0, 1.0),
)
def test_labels_exhaustive_and_exclusive(R, m, cols, rows, jitter):
    spec = _small_random_spec(R, m, cols, rows, jitter)
    d = min_crop_size(m, R)
    cm = classify_pixels(spec, d)
    assert cm.labels.shape == (spec.sensor_height, spec.sensor_width)
    assert set(np.unique(cm.labels)) <= {int(k) for k in PixelClass}
    assert sum(cm.class_fractions.values()) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(R=st.integers(8, 20), cols=st.integers(1, 3), rows=st.integers(1, 3))
def test_sub_aperture_pixels_inside_inscribed_square(R, cols, rows):
    spec = _small_random_spec(R, 0.8, cols, rows, 0.3)
    d = min_crop_size(0.8, R)
    cm = classify_pixels(spec, d)
    ii, jj = np.nonzero(cm.labels == PixelClass.SUB_APERTURE_EFFECTIVE)
    centers = np.array([(x, y) for _, _, x, y in derive_centers(spec)])
    px, py = jj + 0.5, ii + 0.5
    dist = np.maximum(np.abs(px[:, None] - centers[None, :, 0]), np.abs(py[:, None] - centers[None, :, 1]))
    assert np.all(dist.min(axis=1) < d / 2)


def test_monotonic_in_d(small_spec):
    maps = [classify_pixels(small_spec, d).labels for d in (40, 44, 48)]
    for lo, hi in zip(maps, maps[1:]):
        changed = lo != hi
        assert np.all(hi[changed] == PixelClass.SUB_APERTURE_EFFECTIVE)
        assert np.all(np.isin(lo[changed], [PixelClass.LF_EFFECTIVE_ONLY, PixelClass.VIGNETTING]))


@pytest.mark.parametrize("d", [40, 48])
def test_scale_invariance(tspc, d):
    base = tspc.subgrid(4, 3)
    k = 4
    a = classify_pixels(base, d)
    b = classify_pixels(base.scaled(k), d * k)
    for cls in PixelClass:
        assert b.count(cls) / (k * k) == pytest.approx(a.count(cls), rel=5e-3)


def test_boundary_fraction_canonical(tspc):
    cm = classify_pixels(tspc, 48)
    assert cm.class_fractions[PixelClass.BOUNDARY_INCOMPLETE] == pytest.approx(0.083, abs=0.01)


def test_lattice_includes_partial_discs(small_spec):
    lenses = list(lattice_lenses(small_spec))
    complete = [1 for r, c, _, _ in lenses if small_spec.is_complete(r, c)]
    assert len(complete) == 12 * 8
    assert len(lenses) > len(complete)


def test_spec_roundtrip(tmp_path, tspc):
    path = tmp_path / "spec.cfg"
    save_spec(tspc, path)
    assert load_spec(path) == tspc
    assert spec_from_kv(parse_kv(dump_spec(tspc))) == tspc


def test_spec_unknown_key():
    with pytest.raises(ValueError):
        spec_from_kv({"sensor_width": "10", "bogus": "1"})
