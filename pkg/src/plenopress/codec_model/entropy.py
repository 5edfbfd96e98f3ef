"""Quantization, likelihood models, rate estimates and the rate-distortion loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, ndtr

SIGMA_MIN = 0.11
PROB_FLOOR = 2.0 ** -50
LAMBDAS = (0.1, 0.05, 0.025, 0.01, 0.005, 0.001)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(y: np.ndarray, mode: str = "round", mu_offset: Optional[np.ndarray] = None, seed=None):
    """``round``: ``round(y - mu) + mu`` (ties away from zero). ``noise``: ``y + U(-0.5, 0.5)``."""
    if mode == "round":
        if mu_offset is None:
            return round_half_away(y)
        return round_half_away(y - mu_offset) + mu_offset
    if mode == "noise":
        rng = np.random.default_rng(seed)
        return y + rng.uniform(-0.5, 0.5, size=np.shape(y))
    raise ValueError(f"unknown quantization mode {mode!r}")


@dataclass
class GaussianParams:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu {self.mu.shape} and sigma {self.sigma.shape} differ")


def clamp_sigma(raw: np.ndarray) -> np.ndarray:
    return np.maximum(raw, SIGMA_MIN)


def gaussian_likelihood(y_hat: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    # mass of the unit bin around |y - mu|, taken on the left tail for precision
    v = np.abs(y_hat - mu)
    p = ndtr((0.5 - v) / sigma) - ndtr((-0.5 - v) / sigma)
    return np.maximum(p, PROB_FLOOR)


def rate_estimate(y_hat: np.ndarray, gp: GaussianParams) -> float:
    """Ideal bits of ``y_hat`` under the discretized Gaussian model."""
    return float(-np.sum(np.log2(gaussian_likelihood(y_hat, gp.mu, gp.sigma))))


# -- factorized prior for the hyper-latent -------------------------------------


def mixture_cdf(v: np.ndarray, logits: np.ndarray, loc: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    """Logistic-mixture CDF; ``v`` broadcasts against the per-component params' leading axes.

    ``logits``, ``loc``, ``log_scale`` have shape ``(..., K)``; ``v`` shape ``(...)``.
    """
    w = np.exp(logits - logits.max(axis=-1, keepdims=True))
    w = w / w.sum(axis=-1, keepdims=True)
    z = (np.asarray(v)[..., None] - loc) * np.exp(-log_scale)
    return np.sum(w * expit(z), axis=-1)


def factorized_likelihood(z_hat: np.ndarray, prior: dict) -> np.ndarray:
    """Per-element probability of integer ``z_hat`` (C, H, W) under the channel priors."""
    C = z_hat.shape[0]
    shape = (C, 1, 1, -1)
    logits = prior["logits"].reshape(shape)
    loc = prior["loc"].reshape(shape)
    log_scale = prior["log_scale"].reshape(shape)
    upper = mixture_cdf(z_hat + 0.5, logits, loc, log_scale)
    lower = mixture_cdf(z_hat - 0.5, logits, loc, log_scale)
    return np.maximum(upper - lower, PROB_FLOOR)


def rate_estimate_factorized(z_hat: np.ndarray, prior: dict) -> float:
    return float(-np.sum(np.log2(factorized_likelihood(z_hat, prior))))


# -- loss ----------------------------------------------------------------------


@dataclass(frozen=True)
class LossConfig:
    lmbda: float = 0.01

    def __post_init__(self):
        if not self.lmbda >= 0:
            raise ValueError("lambda must be non-negative")

    @classmethod
    def from_index(cls, index: int) -> "LossConfig":
        return cls(LAMBDAS[index])


def rd_loss(x, x_hat, rate_y_bits: float, rate_z_bits: float, cfg: LossConfig, pixel_count: int) -> float:
    """``(R_y + R_z) / pixels + lambda * 255^2 * MSE`` with ``x``, ``x_hat`` on the [0, 1] scale."""
    x, x_hat = np.asarray(x), np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"x {x.shape} and x_hat {x_hat.shape} differ")
    dist = float(np.mean((x - x_hat) ** 2))
    return (rate_y_bits + rate_z_bits) / pixel_count + cfg.lmbda * 255.0 ** 2 * dist
