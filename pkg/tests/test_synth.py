import numpy as np
import pytest

from plenopress.camera_geometry import PixelClass, classify_pixels
from plenopress.preprocess import crop_and_align
from plenopress.synth import DEFAULT_CONSTANT, SCENES, scene_values, synth_plenoptic, synth_white


def test_constant_scene_classes(small_spec):
    img = synth_plenoptic("constant", small_spec)
    labels = classify_pixels(small_spec, 40).labels
    inside = np.isin(labels, [PixelClass.SUB_APERTURE_EFFECTIVE, PixelClass.LF_EFFECTIVE_ONLY])
    assert np.all(img[inside] == DEFAULT_CONSTANT)
    assert not img[labels == PixelClass.INTER_MICROIMAGE].any()


def test_zero_parallax_identical_microimages(small_spec):
    pre = crop_and_align(synth_plenoptic("textured", small_spec, parallax=0), small_spec, 40)
    ref = pre.tile(0, 0)[2:38, 2:38]
    for r in range(small_spec.complete_rows):
        for c in range(small_spec.complete_cols):
            assert np.array_equal(pre.tile(r, c)[2:38, 2:38], ref)


def test_gradient_parallax_is_one_pixel_shift(small_spec):
    pre = crop_and_align(synth_plenoptic("gradient", small_spec, parallax=1), small_spec, 40)
    for r in range(small_spec.complete_rows):
        for c in range(small_spec.complete_cols - 1):
            a = pre.tile(r, c)[4:36, 5:36]
            b = pre.tile(r, c + 1)[4:36, 4:35]
            assert np.array_equal(a, b)
    down = pre.tile(1, 3)[4:35, 4:36]
    assert np.array_equal(pre.tile(0, 3)[5:36, 4:36], down)


@pytest.mark.parametrize("scene", SCENES)
def test_deterministic(small_spec, scene):
    a = synth_plenoptic(scene, small_spec, seed=4)
    b = synth_plenoptic(scene, small_spec, seed=4)
    assert np.array_equal(a, b)
    assert a.shape == (small_spec.sensor_height, small_spec.sensor_width, 3) and a.dtype == np.uint8


def test_seed_changes_texture(small_spec):
    assert not np.array_equal(synth_plenoptic("textured", small_spec, 0), synth_plenoptic("textured", small_spec, 1))


def test_unknown_scene():
    with pytest.raises(ValueError):
        scene_values("fractal", np.zeros(1), np.zeros(1))


def test_white_image_peaks_at_255(small_spec):
    w = synth_white(small_spec)
    assert w.max() == 255
    labels = classify_pixels(small_spec, 40).labels
    assert np.all(w[labels == PixelClass.SUB_APERTURE_EFFECTIVE] == 255)
