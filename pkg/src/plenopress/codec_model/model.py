"""The full codec: parameter layout, container format and forward passes.

Layer stack (N latent channels, M hyper channels)::

    g_a : rbnd 3->N, GDN | rbnd N->N, GDN | GA[rbnd N->N], GDN | rbnd N->N        -> y
    h_a : conv3 N->M, lrelu | GA[rbnd M->M], lrelu | conv3/2 M->M                 -> z
    h_s : conv3 M->M, lrelu | subpixel M->M, lrelu | GA[rbnu M->M], lrelu | conv3 M->2N
    ctx : masked 5x5 conv N->2N over y_hat
    ep  : 1x1 4N->3N, lrelu | 1x1 3N->2N                                          -> (mu, sigma)
    g_s : rbnu N->N, IGDN | GA[rbnu N->N], IGDN | rbnu N->N, IGDN | rbnu N->3     -> x_hat

GA[...] is the global attention module wrapped around that resampler. The
synthesis side places it at the stage mirroring the analysis side.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import blocks
from .attention import ATTENTION_BUDGET, default_heads, global_attention
from .entropy import GaussianParams, clamp_sigma
from .layers import BETA_MIN, conv2d, gdn, leaky_relu, masked_kernel

MAGIC = b"FPMP"
VERSION = 1
CONTEXT_K = 5
PRIOR_COMPONENTS = 3
DOWNSAMPLE = 16
HYPER_DOWNSAMPLE = 64

# (prefix, resampler, wrapped in global attention) per main-path stage
_ANALYSIS = [("g_a.0", "rbnd", False), ("g_a.1", "rbnd", False), ("g_a.2", "rbnd", True), ("g_a.3", "rbnd", False)]
_SYNTHESIS = [("g_s.0", "rbnu", False), ("g_s.1", "rbnu", True), ("g_s.2", "rbnu", False), ("g_s.3", "rbnu", False)]


def _conv_shapes(name: str, o: int, i: int, k: int) -> dict:
    return {name + ".weight": (o, i, k, k), name + ".bias": (o,)}


def _stage_shapes(prefix: str, C: int, C_in: int) -> dict:
    s = {}
    for lin, fan_in in (("q", C), ("k", C_in), ("v", C_in), ("proj", C)):
        s[f"{prefix}.{lin}.weight"] = (C, fan_in)
        s[f"{prefix}.{lin}.bias"] = (C,)
    return s


def _block_shapes(prefix: str, kind: str, i: int, o: int, ga: bool) -> dict:
    inner = prefix + ".resample" if ga else prefix
    s = {f"{inner}.{k}": v for k, v in blocks.resampler_shapes(kind, i, o).items()}
    if ga:
        s.update(_stage_shapes(prefix + ".stage1", o, i))
        s.update(_stage_shapes(prefix + ".stage2", o, i))
    return s


def _gdn_shapes(name: str, C: int) -> dict:
    return {name + ".beta": (C,), name + ".gamma": (C, C)}


def param_shapes(N: int, M: int) -> dict[str, tuple]:
    """Ordered name -> shape table; the order is the container's layer order."""
    s: dict[str, tuple] = {}
    chans = [3, N, N, N, N]
    for n, (prefix, kind, ga) in enumerate(_ANALYSIS):
        s.update(_block_shapes(prefix, kind, chans[n], chans[n + 1], ga))
        if n < 3:
            s.update(_gdn_shapes(f"g_a.gdn{n}", N))
    s.update(_conv_shapes("h_a.0", M, N, 3))
    s.update(_block_shapes("h_a.1", "rbnd", M, M, True))
    s.update(_conv_shapes("h_a.2", M, M, 3))
    s.update(_conv_shapes("h_s.0", M, M, 3))
    s.update(_conv_shapes("h_s.1.conv", 4 * M, M, 3))
    s.update(_block_shapes("h_s.2", "rbnu", M, M, True))
    s.update(_conv_shapes("h_s.3", 2 * N, M, 3))
    s.update(_conv_shapes("ctx", 2 * N, N, CONTEXT_K))
    s.update(_conv_shapes("ep.0", 3 * N, 4 * N, 1))
    s.update(_conv_shapes("ep.1", 2 * N, 3 * N, 1))
    chans = [N, N, N, N, 3]
    for n, (prefix, kind, ga) in enumerate(_SYNTHESIS):
        s.update(_block_shapes(prefix, kind, chans[n], chans[n + 1], ga))
        if n < 3:
            s.update(_gdn_shapes(f"g_s.igdn{n}", N))
    for name in ("logits", "loc", "log_scale"):
        s["prior." + name] = (M, PRIOR_COMPONENTS)
    return s


def _init_tensor(name: str, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "beta":
        return np.ones(shape)
    if leaf == "gamma":
        return 1e-3 * np.eye(shape[0])
    if leaf == "bias":
        return np.zeros(shape)
    if name.startswith("prior."):
        if leaf == "loc":
            return np.tile(np.linspace(-1.0, 1.0, shape[1]), (shape[0], 1))
        return np.zeros(shape)
    if len(shape) == 2:
        # attention linear layers: identity plus small noise
        w = 0.05 * rng.standard_normal(shape) / np.sqrt(shape[1])
        n = min(shape)
        w[np.arange(n), np.arange(n)] += 1.0
        return w
    fan_in = shape[1] * shape[2] * shape[3]
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


@dataclass
class ModelParams:
    N: int
    M: int
    heads: int
    tensors: dict = field(repr=False)

    def __post_init__(self):
        self.validate()

    @classmethod
    def init(cls, N: int = 128, M: int = 192, heads: Optional[int] = None, seed: int = 0) -> "ModelParams":
        """Seeded deterministic initialization.

        Every value is rounded through float32 so that saving and reloading
        the container reproduces the parameters exactly.
        """
        rng = np.random.default_rng(seed)
        heads = default_heads(min(N, M)) if heads is None else heads
        t = {}
        for name, shape in param_shapes(N, M).items():
            t[name] = _init_tensor(name, shape, rng).astype(np.float32).astype(np.float64)
        # start the scale branch away from the clamp
        t["ep.1.bias"][N:] = 1.0
        return cls(N, M, heads, t)

    def validate(self):
        shapes = param_shapes(self.N, self.M)
        if set(shapes) != set(self.tensors):
            missing = sorted(set(shapes) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(shapes))
            raise ValueError(f"parameter set mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, shape in shapes.items():
            a = self.tensors[name]
            if a.shape != shape:
                raise ValueError(f"{name}: shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name}: non-finite values")
            if name.endswith(".beta") and np.any(a <= BETA_MIN):
                raise ValueError(f"{name}: beta must exceed {BETA_MIN}")
            if name.endswith(".gamma") and np.any(a < 0):
                raise ValueError(f"{name}: gamma must be non-negative")
        for C in (self.N, self.M):
            if C % self.heads:
                raise ValueError(f"{C} channels do not split into {self.heads} heads")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def sub(self, prefix: str) -> dict:
        prefix += "."
        n = len(prefix)
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.N, self.M, self.heads, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.N, self.M, self.heads, {k: v.copy() for k, v in self.tensors.items()})

    # -- container -------------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        shapes = param_shapes(self.N, self.M)
        buf.write(MAGIC)
        buf.write(struct.pack("<HHHHI", VERSION, self.N, self.M, self.heads, len(shapes)))
        for name, shape in shapes.items():
            raw = name.encode()
            buf.write(struct.pack("<HB", len(raw), len(shape)))
            buf.write(raw)
            buf.write(struct.pack(f"<{len(shape)}I", *shape))
        for name in shapes:
            buf.write(np.ascontiguousarray(self.tensors[name], dtype="<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelParams":
        if data[:4] != MAGIC:
            raise ValueError("not a parameter container (bad magic)")
        version, N, M, heads, count = struct.unpack_from("<HHHHI", data, 4)
        if version != VERSION:
            raise ValueError(f"unsupported parameter container version {version}")
        pos = 4 + struct.calcsize("<HHHHI")
        table = []
        for _ in range(count):
            nlen, ndim = struct.unpack_from("<HB", data, pos)
            pos += 3
            name = data[pos:pos + nlen].decode()
            pos += nlen
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            table.append((name, shape))
        tensors = {}
        for name, shape in table:
            n = int(np.prod(shape))
            if pos + 4 * n > len(data):
                raise ValueError("parameter container is truncated")
            tensors[name] = np.frombuffer(data, "<f4", n, pos).reshape(shape).astype(np.float64)
            pos += 4 * n
        if pos != len(data):
            raise ValueError("trailing bytes in parameter container")
        return cls(N, M, heads, tensors)

    @property
    def model_id(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()[:16]

    def manifest(self) -> str:
        lines = [f"# N={self.N} M={self.M} heads={self.heads} model_id={self.model_id.hex()}"]
        for name, shape in param_shapes(self.N, self.M).items():
            blob = np.ascontiguousarray(self.tensors[name], dtype="<f4").tobytes()
            dims = "x".join(str(d) for d in shape)
            lines.append(f"{name}\t{dims}\t{hashlib.sha256(blob).hexdigest()[:16]}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        path.with_name(path.name + ".manifest").write_text(self.manifest())

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_bytes(Path(path).read_bytes())


# -- forward passes ------------------------------------------------------------


def _conv(x, params: ModelParams, name: str, stride: int = 1):
    return conv2d(x, params[name + ".weight"], params[name + ".bias"], stride)[0]


def _lrelu(x):
    return leaky_relu(x)[0]


def _gdn(x, params: ModelParams, name: str, inverse: bool = False):
    return gdn(x, params[name + ".beta"], params[name + ".gamma"], inverse)[0]


def _stage(x, params: ModelParams, prefix: str, kind: str, ga: bool):
    if ga:
        return global_attention(x, params.sub(prefix), kind, params.heads, keep=False)[0]
    return blocks.resample(x, params.sub(prefix), kind)[0]


def check_input(x: np.ndarray):
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) tensor, got {x.shape}")
    _, H, W = x.shape
    if H % HYPER_DOWNSAMPLE or W % HYPER_DOWNSAMPLE:
        raise ValueError(f"input {H}x{W} is not a multiple of {HYPER_DOWNSAMPLE}")


def analysis_transform(x: np.ndarray, params: ModelParams) -> np.ndarray:
    check_input(x)
    h = x
    for n, (prefix, kind, ga) in enumerate(_ANALYSIS):
        h = _stage(h, params, prefix, kind, ga)
        if n < 3:
            h = _gdn(h, params, f"g_a.gdn{n}")
    return h


def hyper_analysis(y: np.ndarray, params: ModelParams) -> np.ndarray:
    h = _lrelu(_conv(y, params, "h_a.0"))
    h = _lrelu(_stage(h, params, "h_a.1", "rbnd", True))
    return _conv(h, params, "h_a.2", stride=2)


def forward_analysis(x: np.ndarray, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """``x`` (3, H, W) on [0, 1] with H, W multiples of 64 -> ``(y, z)``."""
    y = analysis_transform(x, params)
    return y, hyper_analysis(y, params)


def hyper_synthesis(z_hat: np.ndarray, params: ModelParams) -> np.ndarray:
    h = _lrelu(_conv(z_hat, params, "h_s.0"))
    h = _lrelu(blocks.subpixel_conv(h, params.sub("h_s.1"))[0])
    h = _lrelu(_stage(h, params, "h_s.2", "rbnu", True))
    return _conv(h, params, "h_s.3")


def forward_synthesis(y_hat: np.ndarray, params: ModelParams) -> np.ndarray:
    h = y_hat
    for n, (prefix, kind, ga) in enumerate(_SYNTHESIS):
        h = _stage(h, params, prefix, kind, ga)
        if n < 3:
            h = _gdn(h, params, f"g_s.igdn{n}", inverse=True)
    return h


def context_features(y_hat: np.ndarray, params: ModelParams) -> np.ndarray:
    w = masked_kernel(params["ctx.weight"])
    return conv2d(y_hat, w, params["ctx.bias"])[0]


def _ep_mlp(feat: np.ndarray, params: ModelParams, N: int):
    """1x1 stack on (4N, P) columns -> (mu, sigma), each (N, P)."""
    w0 = params["ep.0.weight"][:, :, 0, 0]
    w1 = params["ep.1.weight"][:, :, 0, 0]
    h = _lrelu(w0 @ feat + params["ep.0.bias"][:, None])
    out = w1 @ h + params["ep.1.bias"][:, None]
    return out[:N], clamp_sigma(out[N:])


def entropy_parameters(hyper: np.ndarray, y_hat: np.ndarray, params: ModelParams) -> GaussianParams:
    """All-at-once (training / estimation) path; the coder uses :class:`SerialContext`."""
    N, H, W = y_hat.shape
    ctx = context_features(y_hat, params)
    feat = np.concatenate([hyper, ctx]).reshape(4 * N, -1)
    mu, sigma = _ep_mlp(feat, params, N)
    return GaussianParams(mu.reshape(N, H, W), sigma.reshape(N, H, W))


class SerialContext:
    """Per-position entropy parameters for raster-order coding.

    Only the causal half of the 5x5 window is gathered, so values at the
    current and later positions never enter the arithmetic. The encoder and
    decoder both drive this class, which makes their ``(mu, sigma)`` agree
    bit for bit.
    """

    def __init__(self, hyper: np.ndarray, params: ModelParams):
        self.N = params.N
        self.params = params
        _, self.H, self.W = hyper.shape
        self.hyper = hyper.reshape(2 * self.N, -1)
        k = CONTEXT_K
        r = k // 2
        taps = [(i, j) for i in range(k) for j in range(k) if i < r or (i == r and j < r)]
        self.offsets = [(i - r, j - r) for i, j in taps]
        w = params["ctx.weight"]
        # (2N, taps * N) with columns ordered tap-major
        self.w_ctx = np.concatenate([w[:, :, i, j] for i, j in taps], axis=1)
        self.b_ctx = params["ctx.bias"]
        self.pad = r
        self.buf = np.zeros((self.N, self.H + 2 * r, self.W + 2 * r), dtype=hyper.dtype)

    def params_at(self, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
        r = self.pad
        cols = [self.buf[:, h + r + di, w + r + dj] for di, dj in self.offsets]
        ctx = self.w_ctx @ np.concatenate(cols) + self.b_ctx
        feat = np.concatenate([self.hyper[:, h * self.W + w], ctx])[:, None]
        mu, sigma = _ep_mlp(feat, self.params, self.N)
        return mu[:, 0], sigma[:, 0]

    def commit(self, h: int, w: int, values: np.ndarray):
        self.buf[:, h + self.pad, w + self.pad] = values

    @property
    def y_hat(self) -> np.ndarray:
        r = self.pad
        return self.buf[:, r:r + self.H, r:r + self.W].copy()


def fits_attention_budget(H: int, W: int) -> bool:
    """Whether every attention site of an H x W patch stays within the budget."""
    sites = [
        (H // 4) * (W // 4),  # g_a.2 input
        (H // 16) * (W // 16),  # h_a.1 input
        (H // 16) * (W // 16),  # h_s.2 output
        (H // 8) * (W // 8),  # g_s.1 output
    ]
    return max(sites) <= ATTENTION_BUDGET
