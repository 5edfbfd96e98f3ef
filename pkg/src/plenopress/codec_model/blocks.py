"""Residual bottleneck resampling blocks.

RBND (down):  x -> 1x1 -> lrelu -> 3x3/2 -> lrelu -> 1x1, plus a 1x1/2 shortcut.
RBNU (up):    x -> 1x1 -> lrelu -> 3x3 -> shuffle -> lrelu -> 1x1, plus a
              1x1 shortcut to 4x channels followed by the same pixel shuffle.
The middle width is half the output width (at least 1).
"""

from __future__ import annotations

from .layers import (
    conv2d,
    conv2d_backward,
    depth_to_space,
    leaky_relu,
    leaky_relu_backward,
    space_to_depth,
)


def bottleneck_width(out_ch: int) -> int:
    return max(out_ch // 2, 1)


def _conv(x, p, name, stride=1):
    return conv2d(x, p[name + ".weight"], p[name + ".bias"], stride)


def _conv_back(dy, cache, name, grads):
    dx, dw, db = conv2d_backward(dy, cache)
    grads[name + ".weight"], grads[name + ".bias"] = dw, db
    return dx


def rbnd(x, p):
    h1, c1 = _conv(x, p, "conv1")
    a1, r1 = leaky_relu(h1)
    h2, c2 = _conv(a1, p, "conv2", stride=2)
    a2, r2 = leaky_relu(h2)
    h3, c3 = _conv(a2, p, "conv3")
    s, cs = _conv(x, p, "skip", stride=2)
    return h3 + s, (c1, r1, c2, r2, c3, cs)


def rbnd_backward(dy, cache, p):
    c1, r1, c2, r2, c3, cs = cache
    g = {}
    dx = _conv_back(dy, cs, "skip", g)
    da2 = _conv_back(dy, c3, "conv3", g)
    da1 = _conv_back(leaky_relu_backward(da2, r2), c2, "conv2", g)
    dx = dx + _conv_back(leaky_relu_backward(da1, r1), c1, "conv1", g)
    return dx, g


def rbnu(x, p):
    h1, c1 = _conv(x, p, "conv1")
    a1, r1 = leaky_relu(h1)
    h2, c2 = _conv(a1, p, "conv2")
    a2, r2 = leaky_relu(depth_to_space(h2))
    h3, c3 = _conv(a2, p, "conv3")
    s, cs = _conv(x, p, "skip")
    return h3 + depth_to_space(s), (c1, r1, c2, r2, c3, cs)


def rbnu_backward(dy, cache, p):
    c1, r1, c2, r2, c3, cs = cache
    g = {}
    dx = _conv_back(space_to_depth(dy), cs, "skip", g)
    da2 = _conv_back(dy, c3, "conv3", g)
    dh2 = space_to_depth(leaky_relu_backward(da2, r2))
    da1 = _conv_back(dh2, c2, "conv2", g)
    dx = dx + _conv_back(leaky_relu_backward(da1, r1), c1, "conv1", g)
    return dx, g


def subpixel_conv(x, p):
    h, c = _conv(x, p, "conv")
    return depth_to_space(h), c


def subpixel_conv_backward(dy, cache, p):
    g = {}
    dx = _conv_back(space_to_depth(dy), cache, "conv", g)
    return dx, g


def strided_conv(x, p):
    return _conv(x, p, "conv", stride=2)


def strided_conv_backward(dy, cache, p):
    g = {}
    dx = _conv_back(dy, cache, "conv", g)
    return dx, g


RESAMPLERS = {
    "rbnd": (rbnd, rbnd_backward),
    "rbnu": (rbnu, rbnu_backward),
    "conv": (strided_conv, strided_conv_backward),
    "subpixel": (subpixel_conv, subpixel_conv_backward),
}


def resample(x, p, kind):
    try:
        fwd, _ = RESAMPLERS[kind]
    except KeyError:
        raise ValueError(f"unknown resampler {kind!r}") from None
    return fwd(x, p)


def resample_backward(dy, cache, p, kind):
    return RESAMPLERS[kind][1](dy, cache, p)


def resampler_shapes(kind: str, in_ch: int, out_ch: int) -> dict[str, tuple]:
    """Parameter shapes of one resampling block."""
    mid = bottleneck_width(out_ch)
    if kind == "rbnd":
        layers = {"conv1": (mid, in_ch, 1), "conv2": (mid, mid, 3), "conv3": (out_ch, mid, 1), "skip": (out_ch, in_ch, 1)}
    elif kind == "rbnu":
        layers = {"conv1": (mid, in_ch, 1), "conv2": (4 * mid, mid, 3), "conv3": (out_ch, mid, 1), "skip": (4 * out_ch, in_ch, 1)}
    elif kind == "conv":
        layers = {"conv": (out_ch, in_ch, 3)}
    elif kind == "subpixel":
        layers = {"conv": (4 * out_ch, in_ch, 3)}
    else:
        raise ValueError(f"unknown resampler {kind!r}")
    shapes = {}
    for name, (o, i, k) in layers.items():
        shapes[name + ".weight"] = (o, i, k, k)
        shapes[name + ".bias"] = (o,)
    return shapes
