"""Sub-aperture-lossless preprocessing of raw lenslet images.

Images are ``(height, width, 3)`` uint8 arrays throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera_geometry import CameraSpec, center_array, center_pixel, min_crop_size


def check_raster(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must be an (H, W, 3) RGB array, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"{name} must be 8-bit, got dtype {img.dtype}")
    return img


@dataclass
class PreprocessedImage:
    image: np.ndarray
    crop_size_d: int
    grid_rows: int
    grid_cols: int
    source_spec: CameraSpec

    def __post_init__(self):
        check_raster(self.image)
        d = self.crop_size_d
        if self.image.shape[:2] != (self.grid_rows * d, self.grid_cols * d):
            raise ValueError(
                f"image {self.image.shape[1]}x{self.image.shape[0]} does not match a "
                f"{self.grid_cols}x{self.grid_rows} grid of {d}px tiles"
            )

    def tile(self, r: int, c: int) -> np.ndarray:
        d = self.crop_size_d
        return self.image[r * d:(r + 1) * d, c * d:(c + 1) * d]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]


def devignette(raw: np.ndarray, white: np.ndarray, floor: float = 0.05) -> np.ndarray:
    """White-image compensation: ``raw * max(white) / max(white, floor * max(white))``."""
    raw, white = check_raster(raw, "raw"), check_raster(white, "white")
    if raw.shape != white.shape:
        raise ValueError(f"raw {raw.shape} and white {white.shape} differ in shape")
    if not 0 < floor < 1:
        raise ValueError(f"floor must lie in (0, 1), got {floor}")
    maxw = white.reshape(-1, 3).max(axis=0).astype(np.float64)
    if np.any(maxw == 0):
        raise ValueError("white image has an all-zero channel")
    denom = np.maximum(white.astype(np.float64), floor * maxw)
    out = np.floor(raw.astype(np.float64) * maxw / denom + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8)


def window_origins(spec: CameraSpec, d: int) -> np.ndarray:
    """Top-left (x, y) pixel of every d x d crop window, shape ``(rows, cols, 2)``."""
    centers = center_array(spec)
    return np.ceil(centers - d / 2.0 - 0.5).astype(np.int64)


def _check_crop_size(spec: CameraSpec, d: int, allow_below_min: bool) -> None:
    if int(d) != d or d <= 0 or d % 2:
        raise ValueError(f"crop size d must be a positive even integer, got {d}")
    d_min = min_crop_size(spec.epa_coefficient_m, spec.microlens_radius_R)
    if not allow_below_min and d < math.ceil(d_min - 1e-9):
        raise ValueError(f"crop size d={d} is below the minimum inscribed square {d_min:.4f}")


def crop_and_align(
    src: np.ndarray, spec: CameraSpec, d: int, *, allow_below_min: bool = False
) -> PreprocessedImage:
    """Cut a d x d window around every complete microlens and tile them on a grid.

    Windows are taken at the true hexagonal centers, so the half-pitch shift of
    odd columns disappears when the tiles land on the rectangular grid.
    ``allow_below_min`` permits ``d < ceil(sqrt(2) m R)`` for distortion sweeps.
    """
    src = check_raster(src, "source")
    d = int(d)
    _check_crop_size(spec, d, allow_below_min)
    if src.shape[:2] != (spec.sensor_height, spec.sensor_width):
        raise ValueError(
            f"source is {src.shape[1]}x{src.shape[0]}, camera sensor is "
            f"{spec.sensor_width}x{spec.sensor_height}"
        )
    origins = window_origins(spec, d)
    rows, cols = spec.complete_rows, spec.complete_cols
    x0, y0 = origins[..., 0], origins[..., 1]
    if x0.min() < 0 or y0.min() < 0 or x0.max() + d > spec.sensor_width or y0.max() + d > spec.sensor_height:
        raise ValueError(f"a {d}x{d} crop window leaves the sensor")

    # gather all windows at once: index arrays of shape (rows, d, cols, d)
    ys = y0[:, None, :, None] + np.arange(d)[None, :, None, None]
    xs = x0[:, None, :, None] + np.arange(d)[None, None, None, :]
    out = src[ys, xs].reshape(rows * d, cols * d, 3)
    return PreprocessedImage(np.ascontiguousarray(out), d, rows, cols, spec)


def reembed(pre: PreprocessedImage) -> np.ndarray:
    """Write every tile back to its sensor window; everything else is zero."""
    spec, d = pre.source_spec, pre.crop_size_d
    out = np.zeros((spec.sensor_height, spec.sensor_width, 3), dtype=np.uint8)
    origins = window_origins(spec, d)
    ys = origins[..., 1][:, None, :, None] + np.arange(d)[None, :, None, None]
    xs = origins[..., 0][:, None, :, None] + np.arange(d)[None, None, None, :]
    out[ys, xs] = pre.image.reshape(pre.grid_rows, d, pre.grid_cols, d, 3)
    return out


def extract_patches(pre: PreprocessedImage, patch: int) -> list[np.ndarray]:
    """Non-overlapping row-major training patches; partial edge patches are dropped."""
    if patch <= 0 or patch % pre.crop_size_d:
        raise ValueError(f"patch size {patch} must be a positive multiple of d={pre.crop_size_d}")
    img = pre.image
    rows, cols = img.shape[0] // patch, img.shape[1] // patch
    return [
        img[r * patch:(r + 1) * patch, c * patch:(c + 1) * patch].copy()
        for r in range(rows)
        for c in range(cols)
    ]


def pad_to_multiple(img: np.ndarray, multiple: int) -> np.ndarray:
    """Zero-pad bottom/right so both dimensions are multiples of ``multiple``."""
    h, w = img.shape[:2]
    ph, pw = -h % multiple, -w % multiple
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw), (0, 0)))


def center_pixels(spec: CameraSpec) -> np.ndarray:
    """Integer (x, y) pixel holding each complete microlens center."""
    centers = center_array(spec)
    return np.vectorize(center_pixel)(centers).astype(np.int64)
