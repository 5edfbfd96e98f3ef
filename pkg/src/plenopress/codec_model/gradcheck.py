"""Analytic-versus-finite-difference gradient verification.

Each target builds a small seeded problem, a scalar loss ``L = sum(g * out)``
with a fixed random cotangent ``g``, and the hand-written backward pass. The
checker then perturbs randomly chosen coordinates of the inputs and
parameters by ``+-h`` and compares central differences with the analytic
gradient.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import ndtr

from . import blocks
from .attention import global_attention, global_attention_backward
from .entropy import LossConfig, rd_loss
from .layers import gdn, gdn_backward

STEP = 1e-5
# coordinates whose exact gradient is zero are compared on an absolute scale
NULL_ATOL = 1e-8
_LN2 = math.log(2.0)


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check_gradients(
    loss: Callable[[dict], float],
    grads: dict,
    values: dict,
    probe_count: int,
    rng: np.random.Generator,
    step: float = STEP,
    null: frozenset = frozenset(),
) -> float:
    """Max relative error over ``probe_count`` random coordinates of ``values``.

    ``loss`` is re-evaluated on perturbed copies; ``grads`` holds the analytic
    gradient for every array in ``values``. Arrays named in ``null`` have an
    identically zero gradient; there both routes must stay below
    ``NULL_ATOL`` in absolute value, since a relative error between two
    round-off residues means nothing. A violation counts as infinite error.
    """
    names = sorted(values)
    sizes = np.array([values[n].size for n in names])
    flat = rng.choice(int(sizes.sum()), size=min(probe_count, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for k in flat:
        t = int(np.searchsorted(bounds, k, side="right"))
        name = names[t]
        idx = np.unravel_index(int(k - (bounds[t] - sizes[t])), values[name].shape)
        ga = float(grads[name][idx])
        if not math.isfinite(ga):
            raise FloatingPointError(f"non-finite analytic gradient for {name}{idx}")
        arr = values[name]
        orig = arr[idx]
        arr[idx] = orig + step
        up = loss(values)
        arr[idx] = orig - step
        down = loss(values)
        arr[idx] = orig
        gfd = (up - down) / (2.0 * step)
        if not math.isfinite(gfd):
            raise FloatingPointError(f"non-finite finite difference for {name}{idx}")
        if name in null:
            if max(abs(ga), abs(gfd)) > NULL_ATOL:
                worst = math.inf
            continue
        worst = max(worst, relative_error(ga, gfd))
    return worst


def _random_gdn(C: int, rng) -> dict:
    return {"beta": rng.uniform(0.5, 1.5, C), "gamma": np.abs(rng.normal(0.0, 0.2, (C, C)))}


def _gdn_problem(rng, C=4, H=4, W=4, inverse=False):
    values = {"x": rng.normal(0.0, 1.0, (C, H, W)), **_random_gdn(C, rng)}
    cot = rng.normal(0.0, 1.0, (C, H, W))

    def loss(v):
        return float(np.sum(cot * gdn(v["x"], v["beta"], v["gamma"], inverse)[0]))

    _, cache = gdn(values["x"], values["beta"], values["gamma"], inverse)
    dx, dbeta, dgamma = gdn_backward(cot, cache)
    return loss, {"x": dx, "beta": dbeta, "gamma": dgamma}, values, frozenset()


def _random_resampler(kind: str, cin: int, cout: int, rng, prefix: str = "") -> dict:
    out = {}
    for name, shape in blocks.resampler_shapes(kind, cin, cout).items():
        scale = 0.1 if name.endswith("bias") else 1.0 / math.sqrt(np.prod(shape[1:]))
        out[prefix + name] = rng.normal(0.0, scale, shape)
    return out


def attention_params(C: int, C_in: int, kind: str, rng) -> dict:
    p = _random_resampler(kind, C_in, C, rng, "resample.")
    for stage in ("stage1", "stage2"):
        for lin, fan_in in (("q", C), ("k", C_in), ("v", C_in), ("proj", C)):
            w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (C, fan_in))
            p[f"{stage}.{lin}.weight"] = w
            p[f"{stage}.{lin}.bias"] = rng.normal(0.0, 0.1, C)
    return p


# softmax is blind to a per-row shift, so the key bias never moves the output
ATTENTION_NULL = frozenset({"stage1.k.bias", "stage2.k.bias"})


def _attention_problem(rng, C=4, H=8, W=8, kind="rbnd", heads=1):
    params = attention_params(C, C, kind, rng)
    values = {"f": rng.normal(0.0, 1.0, (C, H, W)), **params}
    out, cache = global_attention(values["f"], params, kind, heads)
    cot = rng.normal(0.0, 1.0, out.shape)

    def loss(v):
        p = {k: a for k, a in v.items() if k != "f"}
        return float(np.sum(cot * global_attention(v["f"], p, kind, heads)[0]))

    df, g = global_attention_backward(cot, cache, params)
    return loss, {"f": df, **g}, values, ATTENTION_NULL


# -- rd_loss through a two-block toy codec -------------------------------------


def _toy_forward(v: dict, x: np.ndarray, noise: np.ndarray, cfg: LossConfig):
    enc = {k[4:]: a for k, a in v.items() if k.startswith("enc.")}
    dec = {k[4:]: a for k, a in v.items() if k.startswith("dec.")}
    h, c_enc = blocks.rbnd(x, enc)
    y, c_gdn = gdn(h, v["gdn.beta"], v["gdn.gamma"])
    y_tilde = y + noise
    sigma = v["sigma"][:, None, None]
    a = (y_tilde + 0.5) / sigma
    b = (y_tilde - 0.5) / sigma
    p = ndtr(a) - ndtr(b)
    rate = float(-np.sum(np.log2(p)))
    x_hat, c_dec = blocks.rbnu(y_tilde, dec)
    L = rd_loss(x, x_hat, rate, 0.0, cfg, x.shape[1] * x.shape[2])
    return L, (c_enc, c_gdn, c_dec, a, b, p, sigma, x_hat)


def _toy_problem(rng, C=4, size=8, lmbda=0.01):
    x = rng.uniform(0.0, 1.0, (3, size, size))
    noise = rng.uniform(-0.5, 0.5, (C, size // 2, size // 2))
    values = {
        **{"enc." + k: a for k, a in _random_resampler("rbnd", 3, C, rng).items()},
        **{"dec." + k: a for k, a in _random_resampler("rbnu", C, 3, rng).items()},
        **{"gdn." + k: a for k, a in _random_gdn(C, rng).items()},
        "sigma": rng.uniform(0.8, 2.0, C),
    }
    cfg = LossConfig(lmbda)

    def loss(v):
        return _toy_forward(v, x, noise, cfg)[0]

    _, (c_enc, c_gdn, c_dec, a, b, p, sigma, x_hat) = _toy_forward(values, x, noise, cfg)
    pixels = size * size
    g = {}
    dxhat = cfg.lmbda * 255.0 ** 2 * 2.0 * (x_hat - x) / x.size
    dy_dec, gd = blocks.rbnu_backward(dxhat, c_dec, None)
    g.update({"dec." + k: a_ for k, a_ in gd.items()})
    # rate term: -log2(Phi(a) - Phi(b)) / pixels
    phi_a = np.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    phi_b = np.exp(-0.5 * b * b) / math.sqrt(2 * math.pi)
    coef = -1.0 / (p * _LN2 * pixels)
    dy_rate = coef * (phi_a - phi_b) / sigma
    g["sigma"] = np.sum(coef * -(a * phi_a - b * phi_b) / sigma, axis=(1, 2))
    dy = dy_dec + dy_rate
    dh, g["gdn.beta"], g["gdn.gamma"] = gdn_backward(dy, c_gdn)
    _, ge = blocks.rbnd_backward(dh, c_enc, None)
    g.update({"enc." + k: a_ for k, a_ in ge.items()})
    return loss, g, values, frozenset()


def _linear_problem(rng, n=16):
    values = {"x": rng.normal(0.0, 1.0, n)}
    w = rng.normal(0.0, 1.0, n)

    def loss(v):
        return float(w @ v["x"])

    return loss, {"x": w.copy()}, values, frozenset()


PROBLEMS = {
    "gdn": _gdn_problem,
    "igdn": lambda rng: _gdn_problem(rng, inverse=True),
    "global_attention": _attention_problem,
    "global_attention_heads2_rbnu": lambda rng: _attention_problem(rng, C=4, H=4, W=4, kind="rbnu", heads=2),
    "rd_loss": _toy_problem,
    "linear": _linear_problem,
}


def grad_check(layer: str, probe_count: int = 200, seed: int = 0, step: float = STEP) -> float:
    """Max relative gradient error of ``layer`` over ``probe_count`` random coordinates."""
    try:
        build = PROBLEMS[layer]
    except KeyError:
        raise ValueError(f"unknown layer {layer!r}; choose from {sorted(PROBLEMS)}") from None
    rng = np.random.default_rng(seed)
    loss, grads, values, null = build(rng)
    return check_gradients(loss, grads, values, probe_count, rng, step, null)
