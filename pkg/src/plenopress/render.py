"""Sub-aperture view rendering by microimage patch stitching.

Every view takes one p x p patch per cropped microimage, displaced from the
microimage center by ``(j - c) * s`` horizontally and ``(i - c) * s``
vertically (``c`` the central view index), and tiles the patches in grid order.
No blending is done between patches, so the renderer is exact and repeatable.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from .camera_geometry import CameraSpec
from .metrics import ms_ssim, mse, psnr
from .preprocess import PreprocessedImage, crop_and_align


@dataclass(frozen=True)
class RenderConfig:
    patch_size_p: int
    views_per_side_V: int = 5
    view_step_s: int = 1
    flip_patches: bool = False
    target_width: Optional[int] = None
    target_height: Optional[int] = None
    resample: str = "bilinear"

    def __post_init__(self):
        if self.patch_size_p < 1:
            raise ValueError("patch size must be at least 1")
        if self.views_per_side_V < 1 or self.views_per_side_V % 2 == 0:
            raise ValueError(f"views per side must be odd, got {self.views_per_side_V}")
        if self.view_step_s < 0:
            raise ValueError("view step must be non-negative")
        if self.resample not in ("nearest", "bilinear"):
            raise ValueError(f"unknown resampling {self.resample!r}")
        if (self.target_width is None) != (self.target_height is None):
            raise ValueError("target_width and target_height go together")

    @property
    def window(self) -> int:
        """Side of the square every view's patches stay inside."""
        return self.patch_size_p + (self.views_per_side_V - 1) * self.view_step_s

    def required_crop(self) -> int:
        """Smallest even crop size that contains every view window."""
        w = self.window + (self.patch_size_p % 2)
        return w + (w % 2)


@dataclass
class ViewGrid:
    """``views`` has shape ``(V, V, H, W, 3)``; ``views[i, j]`` is view (i, j)."""

    views: np.ndarray

    def __post_init__(self):
        v = self.views
        if v.ndim != 5 or v.shape[0] != v.shape[1] or v.shape[4] != 3:
            raise ValueError(f"expected (V, V, H, W, 3) views, got shape {v.shape}")

    @property
    def V(self) -> int:
        return self.views.shape[0]

    def central(self) -> np.ndarray:
        c = self.V // 2
        return self.views[c, c]

    def __getitem__(self, ij):
        return self.views[ij]


def _resample(img: np.ndarray, width: int, height: int, method: str) -> np.ndarray:
    h, w = img.shape[:2]
    if (w, h) == (width, height):
        return img
    # pixel-center aligned sampling grid
    ys = (np.arange(height) + 0.5) * (h / height) - 0.5
    xs = (np.arange(width) + 0.5) * (w / width) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    order = 0 if method == "nearest" else 1
    out = np.empty((height, width, 3), dtype=np.float64)
    for ch in range(3):
        out[..., ch] = ndimage.map_coordinates(
            img[..., ch].astype(np.float64), [yy, xx], order=order, mode="nearest"
        )
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def _render_one(tiles: np.ndarray, d: int, cfg: RenderConfig, i: int, j: int) -> np.ndarray:
    rows, cols = tiles.shape[0], tiles.shape[2]
    p, s, c = cfg.patch_size_p, cfg.view_step_s, cfg.views_per_side_V // 2
    top = d // 2 - p // 2 + (i - c) * s
    left = d // 2 - p // 2 + (j - c) * s
    patches = tiles[:, top:top + p, :, left:left + p]
    if cfg.flip_patches:
        patches = patches[:, ::-1, :, ::-1]
    view = np.ascontiguousarray(patches).reshape(rows * p, cols * p, 3)
    if cfg.target_width is not None:
        view = _resample(view, cfg.target_width, cfg.target_height, cfg.resample)
    return view


def render_views(
    img: Union[PreprocessedImage, np.ndarray],
    cfg: RenderConfig,
    spec: Optional[CameraSpec] = None,
    d: Optional[int] = None,
    *,
    threads: int = 1,
) -> ViewGrid:
    """Render the V x V view grid.

    ``img`` is either a :class:`PreprocessedImage` or a raw sensor image, in
    which case ``spec`` and ``d`` are required and the image is cropped first.
    """
    if not isinstance(img, PreprocessedImage):
        if spec is None or d is None:
            raise ValueError("raw-layout input needs a camera spec and a crop size")
        img = crop_and_align(img, spec, d, allow_below_min=True)
    d = img.crop_size_d
    p, c = cfg.patch_size_p, cfg.views_per_side_V // 2
    lo = d // 2 - p // 2 - c * cfg.view_step_s
    hi = d // 2 - p // 2 + c * cfg.view_step_s + p
    if lo < 0 or hi > d:
        raise ValueError(
            f"view windows span [{lo}, {hi}) which escapes the {d}px crop square "
            f"(p={p}, V={cfg.views_per_side_V}, s={cfg.view_step_s})"
        )
    tiles = img.image.reshape(img.grid_rows, d, img.grid_cols, d, 3)
    V = cfg.views_per_side_V
    coords = [(i, j) for i in range(V) for j in range(V)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rendered = list(pool.map(lambda ij: _render_one(tiles, d, cfg, *ij), coords))
    else:
        rendered = [_render_one(tiles, d, cfg, i, j) for i, j in coords]
    views = np.stack(rendered).reshape(V, V, *rendered[0].shape)
    return ViewGrid(views)


def view_pair_distortion(a: ViewGrid, b: ViewGrid, metric: str = "PSNR") -> float:
    """Mean of a per-view metric over all V^2 views (``MSE``, ``PSNR`` or ``MS-SSIM``).

    A single infinite PSNR view makes the mean infinite.
    """
    if a.views.shape != b.views.shape:
        raise ValueError(f"view grids differ: {a.views.shape} vs {b.views.shape}")
    fn = {"MSE": mse, "PSNR": psnr, "MS-SSIM": ms_ssim}.get(metric.upper())
    if fn is None:
        raise ValueError(f"unknown metric {metric!r}")
    V = a.V
    vals = [fn(a.views[i, j], b.views[i, j]) for i in range(V) for j in range(V)]
    return float(np.mean(vals))


def write_view_grid(grid: ViewGrid, outdir, cfg: Optional[RenderConfig] = None) -> None:
    from .imageio import write_image

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    V = grid.V
    for i in range(V):
        for j in range(V):
            write_image(outdir / f"view_{i}_{j}.png", grid.views[i, j])
    index = {
        "views_per_side": V,
        "width": int(grid.views.shape[3]),
        "height": int(grid.views.shape[2]),
        "files": [f"view_{i}_{j}.png" for i in range(V) for j in range(V)],
    }
    if cfg is not None:
        index["config"] = asdict(cfg)
    (outdir / "index.json").write_text(json.dumps(index, indent=2) + "\n")
