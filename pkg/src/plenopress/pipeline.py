"""End-to-end evaluation flow: source views versus views from the decoded image."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .camera_geometry import CameraSpec
from .metrics import RdPoint, bpp
from .preprocess import PreprocessedImage, reembed
from .render import RenderConfig, ViewGrid, render_views, view_pair_distortion

MAX_THREADS = 8


def default_threads() -> int:
    return max(1, min(os.cpu_count() or 1, MAX_THREADS))


@dataclass
class PipelineConfig:
    spec: CameraSpec
    crop_size_d: int = 48
    render: RenderConfig = field(default_factory=lambda: RenderConfig(36, 5, 1))
    params_path: Optional[Path] = None
    lambda_index: int = 0
    patch_size: int = 384
    threads: int = 1
    verify: bool = False

    def __post_init__(self):
        if self.crop_size_d % 2:
            raise ValueError(f"crop size d={self.crop_size_d} must be even")
        if self.params_path is not None and not Path(self.params_path).exists():
            raise FileNotFoundError(self.params_path)

    @property
    def dtype(self):
        return np.float64 if self.verify else np.float32


def reference_views(source, spec: CameraSpec, cfg: RenderConfig, threads: int = 1) -> ViewGrid:
    """Views of the uncompressed data; ``source`` is a raw sensor array or a preprocessed image."""
    if isinstance(source, PreprocessedImage):
        source = reembed(source)
    return render_views(source, cfg, spec, cfg.required_crop(), threads=threads)


def decoded_views(decoded: PreprocessedImage, cfg: RenderConfig, threads: int = 1) -> ViewGrid:
    return render_views(reembed(decoded), cfg, decoded.source_spec, cfg.required_crop(), threads=threads)


def evaluate_point(
    source,
    decoded: PreprocessedImage,
    bit_count: int,
    cfg: RenderConfig,
    threads: int = 1,
) -> RdPoint:
    """(bpp, view-averaged PSNR, view-averaged MS-SSIM) of one decoded image."""
    spec = decoded.source_spec
    ref = reference_views(source, spec, cfg, threads)
    test = decoded_views(decoded, cfg, threads)
    return RdPoint(
        bpp(bit_count, spec),
        view_pair_distortion(ref, test, "PSNR"),
        view_pair_distortion(ref, test, "MS-SSIM"),
    )
