"""8-bit RGB image files and the key/value sidecars that travel with them."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .camera_geometry import dump_spec, parse_kv, spec_from_kv
from .preprocess import PreprocessedImage, check_raster


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(path, img: np.ndarray) -> None:
    """Write PNG, or binary PPM (P6) when the suffix is ``.ppm``."""
    img = check_raster(img)
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        h, w = img.shape[:2]
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (w, h))
            fh.write(np.ascontiguousarray(img).tobytes())
    else:
        Image.fromarray(img, "RGB").save(path, format="PNG")


def sidecar_path(image_path) -> Path:
    p = Path(image_path)
    return p.with_name(p.name + ".meta")


def write_preprocessed(path, pre: PreprocessedImage) -> None:
    write_image(path, pre.image)
    meta = (
        f"crop_size_d = {pre.crop_size_d}\n"
        f"grid_rows = {pre.grid_rows}\n"
        f"grid_cols = {pre.grid_cols}\n"
    )
    spec_lines = "".join(f"spec.{line}\n" for line in dump_spec(pre.source_spec).splitlines())
    sidecar_path(path).write_text(meta + spec_lines)


def read_preprocessed(path) -> PreprocessedImage:
    kv = parse_kv(sidecar_path(path).read_text())
    spec = spec_from_kv({k[5:]: v for k, v in kv.items() if k.startswith("spec.")})
    return PreprocessedImage(
        read_image(path),
        int(kv["crop_size_d"]),
        int(kv["grid_rows"]),
        int(kv["grid_cols"]),
        spec,
    )
