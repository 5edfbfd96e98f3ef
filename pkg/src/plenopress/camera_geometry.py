"""Hexagonal microlens-array geometry and per-pixel effectiveness labels.

Microlenses are laid out in columns; every odd column (0-based) is shifted
down by ``column_offset``. Lattice index ``(r, c)`` with ``0 <= r < complete_rows``
and ``0 <= c < complete_cols`` are the declared complete microlenses; all other
lattice positions whose disc touches the sensor are boundary-incomplete.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import Iterator, Optional

import numpy as np


class PixelClass(IntEnum):
    INTER_MICROIMAGE = 0
    BOUNDARY_INCOMPLETE = 1
    VIGNETTING = 2
    SUB_APERTURE_EFFECTIVE = 3
    LF_EFFECTIVE_ONLY = 4


@dataclass(frozen=True)
class CameraSpec:
    """Microlens-array and sensor layout, all lengths in pixels."""

    sensor_width: int
    sensor_height: int
    microlens_radius_R: float
    epa_coefficient_m: float
    grid_origin: tuple[float, float]
    complete_cols: int
    complete_rows: int
    hex_horizontal_pitch: Optional[float] = None
    hex_vertical_pitch: Optional[float] = None
    column_offset: Optional[float] = None
    nominal_diameter: Optional[float] = None
    main_focal_length: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    microlens_focal_length_f: Optional[float] = None

    def __post_init__(self):
        R = self.microlens_radius_R
        if self.hex_horizontal_pitch is None:
            object.__setattr__(self, "hex_horizontal_pitch", math.sqrt(3.0) * R)
        if self.hex_vertical_pitch is None:
            object.__setattr__(self, "hex_vertical_pitch", 2.0 * R)
        if self.column_offset is None:
            object.__setattr__(self, "column_offset", R)
        object.__setattr__(self, "grid_origin", tuple(float(v) for v in self.grid_origin))
        self.validate()

    def validate(self) -> None:
        R = self.microlens_radius_R
        if not R > 0:
            raise ValueError(f"microlens radius must be positive, got {R}")
        if not 0 < self.epa_coefficient_m <= 1:
            raise ValueError(f"EPA coefficient must lie in (0, 1], got {self.epa_coefficient_m}")
        if self.complete_cols < 1 or self.complete_rows < 1:
            raise ValueError("at least one complete microlens is required")
        if self.sensor_width < 1 or self.sensor_height < 1:
            raise ValueError("sensor dimensions must be positive")
        xs, ys = self._complete_extent()
        if xs[0] < R or ys[0] < R or xs[1] > self.sensor_width - R or ys[1] > self.sensor_height - R:
            raise ValueError(
                "declared complete microlenses must stay at least R from the sensor edges "
                f"(x range {xs}, y range {ys}, sensor {self.sensor_width}x{self.sensor_height})"
            )

    def _complete_extent(self):
        ox, oy = self.grid_origin
        x_max = ox + (self.complete_cols - 1) * self.hex_horizontal_pitch
        y_min = oy
        y_max = oy + (self.complete_rows - 1) * self.hex_vertical_pitch
        if self.complete_cols > 1:
            y_max += self.column_offset
        return (ox, x_max), (y_min, y_max)

    @property
    def sensor_pixels(self) -> int:
        return self.sensor_width * self.sensor_height

    def center(self, r: int, c: int) -> tuple[float, float]:
        ox, oy = self.grid_origin
        x = ox + c * self.hex_horizontal_pitch
        y = oy + r * self.hex_vertical_pitch + (c % 2) * self.column_offset
        return x, y

    def is_complete(self, r: int, c: int) -> bool:
        return 0 <= r < self.complete_rows and 0 <= c < self.complete_cols

    def scaled(self, k: int) -> "CameraSpec":
        """Every length multiplied by ``k`` (integer so the sensor stays whole)."""
        return replace(
            self,
            sensor_width=self.sensor_width * k,
            sensor_height=self.sensor_height * k,
            microlens_radius_R=self.microlens_radius_R * k,
            grid_origin=(self.grid_origin[0] * k, self.grid_origin[1] * k),
            hex_horizontal_pitch=self.hex_horizontal_pitch * k,
            hex_vertical_pitch=self.hex_vertical_pitch * k,
            column_offset=self.column_offset * k,
        )

    def subgrid(self, cols: int, rows: int) -> "CameraSpec":
        """Same optics and lattice, with only the top-left ``cols x rows`` complete lenses.

        The sensor shrinks so the margins match the ones on the left and top.
        """
        ox, oy = self.grid_origin
        x_max = ox + (cols - 1) * self.hex_horizontal_pitch
        y_max = oy + (rows - 1) * self.hex_vertical_pitch + (self.column_offset if cols > 1 else 0.0)
        return replace(
            self,
            complete_cols=cols,
            complete_rows=rows,
            sensor_width=math.ceil(x_max + ox),
            sensor_height=math.ceil(y_max + oy),
        )


def derive_centers(spec: CameraSpec) -> list[tuple[int, int, float, float]]:
    """Complete-microlens centers as ``(row, col, x, y)`` in row-major order."""
    return [
        (r, c, *spec.center(r, c))
        for r in range(spec.complete_rows)
        for c in range(spec.complete_cols)
    ]


def center_array(spec: CameraSpec) -> np.ndarray:
    """Centers of the complete grid as a ``(rows, cols, 2)`` array of (x, y)."""
    r = np.arange(spec.complete_rows)[:, None]
    c = np.arange(spec.complete_cols)[None, :]
    ox, oy = spec.grid_origin
    x = ox + c * spec.hex_horizontal_pitch + 0 * r
    y = oy + r * spec.hex_vertical_pitch + (c % 2) * spec.column_offset
    return np.stack([x, y], axis=-1).astype(np.float64)


def lattice_lenses(spec: CameraSpec) -> Iterator[tuple[int, int, float, float]]:
    """Every lattice microlens whose disc overlaps the sensor, complete or not."""
    R = spec.microlens_radius_R
    ox, oy = spec.grid_origin
    hp, vp, off = spec.hex_horizontal_pitch, spec.hex_vertical_pitch, spec.column_offset
    c_lo = math.floor((-R - ox) / hp) - 1
    c_hi = math.ceil((spec.sensor_width + R - ox) / hp) + 1
    for c in range(c_lo, c_hi + 1):
        x = ox + c * hp
        if x + R <= 0 or x - R >= spec.sensor_width:
            continue
        shift = (c % 2) * off
        r_lo = math.floor((-R - oy - shift) / vp) - 1
        r_hi = math.ceil((spec.sensor_height + R - oy - shift) / vp) + 1
        for r in range(r_lo, r_hi + 1):
            y = oy + r * vp + shift
            if y + R <= 0 or y - R >= spec.sensor_height:
                continue
            yield r, c, x, y


def min_crop_size(m: float, R: float) -> float:
    """Side of the square inscribed in the EPA disc of radius ``m * R``."""
    if not R > 0:
        raise ValueError(f"R must be positive, got {R}")
    if not 0 < m <= 1:
        raise ValueError(f"m must lie in (0, 1], got {m}")
    return math.sqrt(2.0) * m * R


def center_pixel(coord: float) -> int:
    """Nearest integer to ``coord``, ties down: the pixel at offset d/2 of any even crop window."""
    return math.ceil(coord - 0.5)


def crop_squares_overlap(spec: CameraSpec, d: float) -> bool:
    hp, vp, off = spec.hex_horizontal_pitch, spec.hex_vertical_pitch, spec.column_offset
    neighbours = [(0.0, vp)]
    if spec.complete_cols > 1:
        neighbours += [(hp, off), (hp, off - vp)]
    return any(abs(dx) < d and abs(dy) < d for dx, dy in neighbours)


@dataclass
class PixelClassMap:
    width: int
    height: int
    labels: np.ndarray
    class_fractions: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.class_fractions:
            counts = np.bincount(self.labels.ravel(), minlength=len(PixelClass))
            total = self.labels.size
            self.class_fractions = {k: counts[int(k)] / total for k in PixelClass}

    def count(self, cls: PixelClass) -> int:
        return int(np.count_nonzero(self.labels == cls))

    def fraction_in(self, cls: PixelClass, x0: float, x1: float, y0: float, y1: float) -> float:
        """Fraction of pixels whose centers fall in ``[x0, x1) x [y0, y1)``."""
        i0, i1 = math.ceil(y0 - 0.5), math.ceil(y1 - 0.5)
        j0, j1 = math.ceil(x0 - 0.5), math.ceil(x1 - 0.5)
        window = self.labels[max(i0, 0):i1, max(j0, 0):j1]
        return float(np.count_nonzero(window == cls)) / window.size


def classify_pixels(spec: CameraSpec, crop_size_d: float) -> PixelClassMap:
    """Label every sensor pixel with its :class:`PixelClass`.

    Membership is decided at pixel centers. When a pixel qualifies for several
    classes (overlapping discs), the first one in the order inter-microimage,
    boundary-incomplete, vignetting, sub-aperture effective, LF-effective wins.
    """
    d = float(crop_size_d)
    R = spec.microlens_radius_R
    if not 0 < d <= 2 * R:
        raise ValueError(f"crop size d={d} must lie in (0, 2R={2 * R}]")
    if crop_squares_overlap(spec, d):
        raise ValueError(f"crop size d={d} makes crop squares of adjacent microlenses overlap")
    r_epa = spec.epa_coefficient_m * R
    half = d / 2.0
    H, W = spec.sensor_height, spec.sensor_width

    in_disc = np.zeros((H, W), dtype=bool)
    incomplete = np.zeros((H, W), dtype=bool)
    complete_disc = np.zeros((H, W), dtype=bool)
    vignetting = np.zeros((H, W), dtype=bool)
    square = np.zeros((H, W), dtype=bool)

    for r, c, cx, cy in lattice_lenses(spec):
        i0, i1 = max(math.floor(cy - R), 0), min(math.ceil(cy + R) + 1, H)
        j0, j1 = max(math.floor(cx - R), 0), min(math.ceil(cx + R) + 1, W)
        dy = (np.arange(i0, i1) + 0.5 - cy)[:, None]
        dx = (np.arange(j0, j1) + 0.5 - cx)[None, :]
        rho2 = dx * dx + dy * dy
        disc = rho2 < R * R
        sl = (slice(i0, i1), slice(j0, j1))
        in_disc[sl] |= disc
        if not spec.is_complete(r, c):
            incomplete[sl] |= disc
            continue
        complete_disc[sl] |= disc
        vignetting[sl] |= disc & (rho2 >= r_epa * r_epa)
        square[sl] |= (np.abs(dx) < half) & (np.abs(dy) < half)

    labels = np.full((H, W), PixelClass.LF_EFFECTIVE_ONLY, dtype=np.uint8)
    labels[square & complete_disc] = PixelClass.SUB_APERTURE_EFFECTIVE
    labels[vignetting] = PixelClass.VIGNETTING
    labels[incomplete] = PixelClass.BOUNDARY_INCOMPLETE
    labels[~in_disc] = PixelClass.INTER_MICROIMAGE
    return PixelClassMap(W, H, labels)


# -- key/value config files ---------------------------------------------------

_TUPLE_KEYS = {"grid_origin"}
_INT_KEYS = {"sensor_width", "sensor_height", "complete_cols", "complete_rows"}


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def spec_from_kv(kv: dict[str, str]) -> CameraSpec:
    known = {f.name for f in fields(CameraSpec)}
    unknown = set(kv) - known
    if unknown:
        raise ValueError(f"unknown camera spec keys: {sorted(unknown)}")
    args = {}
    for key, value in kv.items():
        if key in _TUPLE_KEYS:
            args[key] = tuple(float(v) for v in value.split(","))
        elif key in _INT_KEYS:
            args[key] = int(value)
        elif value.lower() in ("", "none"):
            args[key] = None
        else:
            args[key] = float(value)
    return CameraSpec(**args)


def load_spec(path) -> CameraSpec:
    return spec_from_kv(parse_kv(Path(path).read_text()))


def dump_spec(spec: CameraSpec) -> str:
    lines = []
    for f in fields(spec):
        value = getattr(spec, f.name)
        if value is None:
            continue
        if f.name in _TUPLE_KEYS:
            value = ", ".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def save_spec(spec: CameraSpec, path) -> None:
    Path(path).write_text(dump_spec(spec))


def canonical_tspc() -> CameraSpec:
    """The Tsinghua single-focused plenoptic camera as shipped in ``data/tspc.cfg``."""
    text = resources.files("plenopress").joinpath("data/tspc.cfg").read_text()
    return spec_from_kv(parse_kv(text))
