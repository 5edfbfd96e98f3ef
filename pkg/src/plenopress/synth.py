"""Synthetic raw plenoptic images with known ground truth.

Each microimage shows a procedural scene sampled on integer coordinates
relative to its center pixel, shifted by ``parallax`` pixels per grid step.
Pixels inside the EPA disc carry the scene value untouched; the ring between
``m R`` and ``R`` fades with a raised-cosine falloff; everything outside all
discs is black. Where two discs overlap, the nearer center wins.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .camera_geometry import CameraSpec, center_pixel, lattice_lenses

SCENES = ("constant", "gradient", "textured")
TEXTURE_PERIOD = 256
DEFAULT_CONSTANT = (200, 120, 60)


@lru_cache(maxsize=16)
def _texture(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = ndimage.gaussian_filter(rng.random((TEXTURE_PERIOD, TEXTURE_PERIOD, 3)), sigma=(2.5, 2.5, 0), mode="wrap")
    t -= t.min(axis=(0, 1))
    t /= t.max(axis=(0, 1))
    tex = np.floor(t * 230.0 + 12.5).astype(np.uint8)
    tex.setflags(write=False)
    return tex


def scene_values(scene: str, X: np.ndarray, Y: np.ndarray, seed: int = 0, constant=DEFAULT_CONSTANT) -> np.ndarray:
    """RGB uint8 scene samples at integer scene coordinates ``X``, ``Y``."""
    X = np.asarray(X, dtype=np.int64)
    Y = np.asarray(Y, dtype=np.int64)
    if scene == "constant":
        return np.broadcast_to(np.asarray(constant, dtype=np.uint8), X.shape + (3,)).copy()
    if scene == "gradient":
        return np.stack([(3 * X) % 256, (5 * Y) % 256, (2 * (X + Y) + 7 * seed) % 256], axis=-1).astype(np.uint8)
    if scene == "textured":
        tex = _texture(seed)
        return tex[Y % TEXTURE_PERIOD, X % TEXTURE_PERIOD]
    raise ValueError(f"unknown scene {scene!r}; choose from {SCENES}")


def vignetting_weight(rho: np.ndarray, r_epa: float, R: float) -> np.ndarray:
    """1 inside the EPA disc, raised-cosine fade to 0 at the disc edge."""
    t = np.clip((rho - r_epa) / (R - r_epa), 0.0, 1.0)
    return np.cos(0.5 * math.pi * t) ** 2


def synth_plenoptic(
    scene: str,
    spec: CameraSpec,
    seed: int = 0,
    parallax: int = 1,
    constant=DEFAULT_CONSTANT,
) -> np.ndarray:
    """Raw (H, W, 3) uint8 sensor image of ``scene`` seen through the microlens array."""
    parallax = int(parallax)
    R = spec.microlens_radius_R
    r_epa = spec.epa_coefficient_m * R
    H, W = spec.sensor_height, spec.sensor_width
    out = np.zeros((H, W, 3), dtype=np.uint8)
    best = np.full((H, W), np.inf)
    for r, c, cx, cy in lattice_lenses(spec):
        i0, i1 = max(math.floor(cy - R), 0), min(math.ceil(cy + R) + 1, H)
        j0, j1 = max(math.floor(cx - R), 0), min(math.ceil(cx + R) + 1, W)
        ii = np.arange(i0, i1)[:, None]
        jj = np.arange(j0, j1)[None, :]
        rho2 = (jj + 0.5 - cx) ** 2 + (ii + 0.5 - cy) ** 2
        sl = (slice(i0, i1), slice(j0, j1))
        take = (rho2 < R * R) & (rho2 < best[sl])
        if not take.any():
            continue
        X = jj - center_pixel(cx) + parallax * c
        Y = ii - center_pixel(cy) + parallax * r
        vals = scene_values(scene, np.broadcast_to(X, rho2.shape), np.broadcast_to(Y, rho2.shape), seed, constant)
        w = vignetting_weight(np.sqrt(rho2), r_epa, R)[..., None]
        faded = np.where(w >= 1.0, vals, np.floor(vals * w + 0.5)).astype(np.uint8)
        out[sl][take] = faded[take]
        best[sl][take] = rho2[take]
    return out


def synth_white(spec: CameraSpec) -> np.ndarray:
    """Flat-field capture: a white scene through the same optics."""
    return synth_plenoptic("constant", spec, parallax=0, constant=(255, 255, 255))
