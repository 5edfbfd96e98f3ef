"""Quality and rate metrics: PSNR, MS-SSIM, bpp, RD curves and BD-rate."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

PEAK = 255.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
MS_SSIM_MIN_SIZE = SSIM_WINDOW * 2 ** (len(MS_SSIM_WEIGHTS) - 1)


def _pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a, b) -> float:
    """Joint-RGB PSNR at peak 255; ``inf`` for identical images."""
    err = mse(a, b)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / err)


def luma(img) -> np.ndarray:
    """BT.601 luma of an ``(H, W, 3)`` image; 2-D input is returned as float."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_terms(x: np.ndarray, y: np.ndarray, window: np.ndarray):
    def filt(img):
        return signal.fftconvolve(img, window, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    c1, c2 = (SSIM_K1 * PEAK) ** 2, (SSIM_K2 * PEAK) ** 2
    cs_map = (2.0 * sxy + c2) / (sxx + syy + c2)
    lum_map = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    return float(np.mean(lum_map * cs_map)), float(np.mean(cs_map))


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2]) * 0.25


def ms_ssim(a, b) -> float:
    """Five-scale MS-SSIM on BT.601 luma with an 11x11, sigma 1.5 Gaussian window.

    Negative per-scale terms are clipped to zero before exponentiation.
    """
    a, b = _pair(a, b)
    x, y = luma(a), luma(b)
    if min(x.shape) < MS_SSIM_MIN_SIZE:
        raise ValueError(f"MS-SSIM needs both sides >= {MS_SSIM_MIN_SIZE}px, got {x.shape}")
    window = gaussian_window()
    value = 1.0
    levels = len(MS_SSIM_WEIGHTS)
    for level, weight in enumerate(MS_SSIM_WEIGHTS):
        ssim, cs = _ssim_terms(x, y, window)
        term = ssim if level == levels - 1 else cs
        value *= max(term, 0.0) ** weight
        if level < levels - 1:
            x, y = _downsample(x), _downsample(y)
    return float(value)


def bpp(bit_count: float, spec) -> float:
    """Bits per pixel of the original sensor image, whatever was actually coded."""
    if bit_count < 0:
        raise ValueError("bit count must be non-negative")
    return bit_count / (spec.sensor_width * spec.sensor_height)


# -- RD curves -------------------------------------------------------------------


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    psnr: float
    ms_ssim: float

    def __post_init__(self):
        if not self.bpp > 0:
            raise ValueError(f"bpp must be positive, got {self.bpp}")
        if not 0.0 <= self.ms_ssim <= 1.0:
            raise ValueError(f"MS-SSIM must lie in [0, 1], got {self.ms_ssim}")


@dataclass
class RdCurve:
    points: list
    label: str = ""

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bpp)
        rates = [p.bpp for p in self.points]
        if len(rates) < 4:
            raise ValueError(f"an RD curve needs at least 4 points, got {len(rates)}")
        if any(r1 <= r0 for r0, r1 in zip(rates, rates[1:])):
            raise ValueError("RD curve rates must be strictly increasing")
        for metric in ("psnr", "ms_ssim"):
            q = [getattr(p, metric) for p in self.points]
            if any(q1 < q0 for q0, q1 in zip(q, q[1:])):
                warnings.warn(f"{self.label or 'RD curve'}: {metric} decreases with rate")

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    def quality(self, metric: str) -> np.ndarray:
        return np.array([getattr(p, metric) for p in self.points], dtype=np.float64)

    @classmethod
    def from_arrays(cls, rates: Sequence[float], psnrs: Sequence[float], ms_ssims=None, label=""):
        if ms_ssims is None:
            ms_ssims = [0.0] * len(rates)
        return cls([RdPoint(r, p, s) for r, p, s in zip(rates, psnrs, ms_ssims)], label)


def write_rd_rows(path, rows: Sequence[tuple[str, RdPoint]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "bpp", "psnr", "ms_ssim"])
        for label, p in rows:
            w.writerow([label, repr(p.bpp), repr(p.psnr), repr(p.ms_ssim)])


def write_rd_csv(path, curves: Sequence[RdCurve]) -> None:
    write_rd_rows(path, [(c.label, p) for c in curves for p in c.points])


def read_rd_rows(path) -> list[tuple[str, RdPoint]]:
    with open(path, newline="") as fh:
        return [
            (row["label"], RdPoint(float(row["bpp"]), float(row["psnr"]), float(row["ms_ssim"])))
            for row in csv.DictReader(fh)
        ]


def read_rd_csv(path) -> list[RdCurve]:
    groups: dict[str, list] = {}
    for label, point in read_rd_rows(path):
        groups.setdefault(label, []).append(point)
    return [RdCurve(points, label) for label, points in groups.items()]


# -- Bjontegaard delta rate -------------------------------------------------------


@dataclass
class BdRate:
    percent: float
    warnings: list = field(default_factory=list)

    def __float__(self):
        return self.percent


def _finite_points(rate, quality, name, notes):
    keep = np.isfinite(quality)
    if not keep.all():
        notes.append(f"{name}: dropped {int((~keep).sum())} point(s) with infinite quality")
    rate, quality = rate[keep], quality[keep]
    if len(rate) < 4:
        raise ValueError(f"{name}: fewer than 4 finite points remain for the cubic fit")
    return rate, quality


def bd_rate(reference: RdCurve, test: RdCurve, metric: str = "psnr") -> BdRate:
    """Average log-rate difference of ``test`` against ``reference`` at equal quality.

    Both curves are fit with a least-squares cubic of log10(bpp) in quality,
    integrated over the shared quality interval. Negative means ``test`` saves rate.
    """
    notes: list[str] = []
    r_ref, q_ref = _finite_points(reference.rates, reference.quality(metric), "reference", notes)
    r_tst, q_tst = _finite_points(test.rates, test.quality(metric), "test", notes)
    lo = max(q_ref.min(), q_tst.min())
    hi = min(q_ref.max(), q_tst.max())
    if not hi > lo:
        raise ValueError(f"quality ranges do not overlap ([{lo}, {hi}])")

    integrals = []
    for name, rate, quality in (("reference", r_ref, q_ref), ("test", r_tst, q_tst)):
        coeffs = np.polyfit(quality, np.log10(rate), 3)
        deriv = np.polyval(np.polyder(coeffs), np.linspace(lo, hi, 257))
        if not (np.all(deriv >= 0) or np.all(deriv <= 0)):
            notes.append(f"{name}: cubic fit is not monotonic over the shared range")
        antider = np.polyint(coeffs)
        integrals.append(np.polyval(antider, hi) - np.polyval(antider, lo))

    avg = (integrals[1] - integrals[0]) / (hi - lo)
    for note in notes:
        warnings.warn(note)
    return BdRate((10.0 ** avg - 1.0) * 100.0, notes)
