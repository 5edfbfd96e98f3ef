"""Bitstream container and the patch-wise image encoder/decoder.

Each patch is one self-contained segment: ``u32 len(z) | z payload | y payload``.
The hyper-latent z goes first under the per-channel factorized tables, so the
decoder can rebuild the hyper features before it touches y. The y symbols are
coded in raster order of positions, all channels of a position together, as
integer residuals ``round(y - mu)`` under a zero-mean table of width sigma.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..codec_model.entropy import mixture_cdf, round_half_away
from ..codec_model.model import (
    HYPER_DOWNSAMPLE,
    ModelParams,
    SerialContext,
    forward_analysis,
    forward_synthesis,
    hyper_synthesis,
)
from ..preprocess import PreprocessedImage, pad_to_multiple
from .cdf import MAX_SYMBOLS, CdfTable, build_cdf, table_from_cdf_fn
from .rangecoder import RangeDecoder, RangeEncoder

MAGIC = b"FPIC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBHHHHH16sBHH")
HEADER_BYTES = _HEADER.size
PRIOR_TAIL_SCALES = 16.0


class BitstreamError(ValueError):
    """Malformed container, or a container that does not match the model."""


@dataclass
class Bitstream:
    width: int
    height: int
    d: int
    grid_rows: int
    grid_cols: int
    model_id: bytes
    lambda_index: int
    patch_size: int
    segments: list = field(default_factory=list)
    version: int = FORMAT_VERSION

    @property
    def patch_count(self) -> int:
        return len(self.segments)

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(
            MAGIC, self.version, self.width, self.height, self.d, self.grid_rows, self.grid_cols,
            self.model_id, self.lambda_index, self.patch_size, self.patch_count,
        )
        body = b"".join(struct.pack("<I", len(s)) + s for s in self.segments)
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < HEADER_BYTES:
            raise BitstreamError("bitstream shorter than its header")
        magic, version, w, h, d, rows, cols, mid, lam, ps, count = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BitstreamError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise BitstreamError(f"unsupported format version {version}")
        pos = HEADER_BYTES
        segments = []
        for i in range(count):
            if pos + 4 > len(data):
                raise BitstreamError(f"segment {i} length prefix is truncated")
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + n > len(data):
                raise BitstreamError(f"segment {i} is truncated")
            segments.append(bytes(data[pos:pos + n]))
            pos += n
        if pos != len(data):
            raise BitstreamError("trailing bytes after the last segment")
        return cls(w, h, d, rows, cols, mid, lam, ps, segments, version)

    def __len__(self) -> int:
        return HEADER_BYTES + sum(4 + len(s) for s in self.segments)

    @property
    def bits(self) -> int:
        return 8 * len(self)


# -- tables ----------------------------------------------------------------------


def prior_tables(params: ModelParams) -> list[CdfTable]:
    """One factorized-prior table per z channel."""
    logits, loc, log_scale = params["prior.logits"], params["prior.loc"], params["prior.log_scale"]
    tables = []
    for c in range(params.M):
        spread = PRIOR_TAIL_SCALES * np.exp(log_scale[c])
        lo = math.floor(np.min(loc[c] - spread))
        hi = math.ceil(np.max(loc[c] + spread))
        if hi - lo + 1 > MAX_SYMBOLS:
            mid = int(round(float(np.mean(loc[c]))))
            lo, hi = mid - MAX_SYMBOLS // 2, mid + MAX_SYMBOLS // 2 - 1
        fn = lambda v, c=c: mixture_cdf(v, logits[c], loc[c], log_scale[c])
        tables.append(table_from_cdf_fn(fn, lo, hi))
    return tables


# -- one patch -------------------------------------------------------------------


@dataclass
class PatchCode:
    segment: bytes
    y_hat: np.ndarray
    z_hat: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    symbols: np.ndarray


def _code_y(hyper: np.ndarray, params: ModelParams, step) -> SerialContext:
    """Drive the serial context over every position; ``step(h, w, mu, sigma)`` returns y_hat there."""
    ctx = SerialContext(hyper, params)
    for h in range(ctx.H):
        for w in range(ctx.W):
            mu, sigma = ctx.params_at(h, w)
            ctx.commit(h, w, step(h, w, mu, sigma))
    return ctx


def encode_patch(x: np.ndarray, params: ModelParams, ztabs: Optional[list] = None) -> PatchCode:
    """``x`` (3, P, P) on [0, 1] -> coded segment plus the encoder-side latents."""
    y, z = forward_analysis(x, params)
    z_hat = round_half_away(z)
    ztabs = prior_tables(params) if ztabs is None else ztabs
    enc = RangeEncoder()
    for c, t in enumerate(ztabs):
        for v in z_hat[c].ravel():
            enc.encode(int(v), t)
    z_bytes = enc.finish()

    hyper = hyper_synthesis(z_hat, params)
    N, H, W = y.shape
    mus, sigmas, syms = (np.empty((N, H, W)) for _ in range(3))
    enc = RangeEncoder()

    def step(h, w, mu, sigma):
        r = round_half_away(y[:, h, w] - mu)
        for c in range(N):
            enc.encode(int(r[c]), build_cdf(0.0, float(sigma[c])))
        mus[:, h, w], sigmas[:, h, w], syms[:, h, w] = mu, sigma, r
        return r + mu

    ctx = _code_y(hyper, params, step)
    segment = struct.pack("<I", len(z_bytes)) + z_bytes + enc.finish()
    return PatchCode(segment, ctx.y_hat, z_hat, mus, sigmas, syms.astype(np.int64))


def decode_patch(
    segment: bytes, params: ModelParams, patch_size: int, ztabs: Optional[list] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Segment -> ``(x_hat (3, P, P), y_hat)``."""
    if len(segment) < 4:
        raise BitstreamError("segment too short")
    (zlen,) = struct.unpack_from("<I", segment)
    if 4 + zlen > len(segment):
        raise BitstreamError("z payload is truncated")
    zs = patch_size // HYPER_DOWNSAMPLE
    dec = RangeDecoder(segment[4:4 + zlen])
    z_hat = np.empty((params.M, zs, zs), dtype=params.dtype)
    ztabs = prior_tables(params) if ztabs is None else ztabs
    for c, t in enumerate(ztabs):
        z_hat[c] = np.array([dec.decode(t) for _ in range(zs * zs)]).reshape(zs, zs)
    dec.check_end()

    hyper = hyper_synthesis(z_hat, params)
    dec = RangeDecoder(segment[4 + zlen:])

    def step(h, w, mu, sigma):
        r = np.array([dec.decode(build_cdf(0.0, float(s))) for s in sigma], dtype=sigma.dtype)
        return r + mu

    ctx = _code_y(hyper, params, step)
    dec.check_end()
    y_hat = ctx.y_hat
    return forward_synthesis(y_hat, params), y_hat


# -- whole image -----------------------------------------------------------------


def to_tensor(img: np.ndarray, dtype=np.float64) -> np.ndarray:
    return (np.asarray(img, dtype=dtype) / 255.0).transpose(2, 0, 1)


def to_raster(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x.transpose(1, 2, 0) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def split_patches(img: np.ndarray, patch: int) -> list[np.ndarray]:
    H, W = img.shape[:2]
    return [img[r:r + patch, c:c + patch] for r in range(0, H, patch) for c in range(0, W, patch)]


def _pool_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def encode_image(
    pre: PreprocessedImage,
    params: ModelParams,
    lambda_index: int = 0,
    patch_size: int = 384,
    threads: int = 1,
    codes: Optional[list] = None,
) -> Bitstream:
    """Zero-pad to a multiple of ``patch_size``, code patches independently.

    Passing a list as ``codes`` collects each patch's :class:`PatchCode`.
    """
    if patch_size % HYPER_DOWNSAMPLE:
        raise ValueError(f"patch size {patch_size} is not a multiple of {HYPER_DOWNSAMPLE}")
    padded = pad_to_multiple(pre.image, patch_size)
    patches = [to_tensor(p, params.dtype) for p in split_patches(padded, patch_size)]
    ztabs = prior_tables(params)
    results = _pool_map(lambda x: encode_patch(x, params, ztabs), patches, threads)
    if codes is not None:
        codes.extend(results)
    return Bitstream(
        width=pre.width,
        height=pre.height,
        d=pre.crop_size_d,
        grid_rows=pre.grid_rows,
        grid_cols=pre.grid_cols,
        model_id=params.model_id,
        lambda_index=lambda_index,
        patch_size=patch_size,
        segments=[r.segment for r in results],
    )


def decode_image(bs: Bitstream, params: ModelParams, threads: int = 1, latents: Optional[list] = None) -> np.ndarray:
    """Bitstream -> uint8 raster of the original preprocessed size."""
    if bs.model_id != params.model_id:
        raise BitstreamError(
            f"bitstream was coded with model {bs.model_id.hex()}, parameters are {params.model_id.hex()}"
        )
    P = bs.patch_size
    rows, cols = -(-bs.height // P), -(-bs.width // P)
    if rows * cols != bs.patch_count:
        raise BitstreamError(f"{bs.patch_count} segments do not tile a {bs.width}x{bs.height} image")
    ztabs = prior_tables(params)
    results = _pool_map(lambda s: decode_patch(s, params, P, ztabs), bs.segments, threads)
    if latents is not None:
        latents.extend(r[1] for r in results)
    out = np.empty((rows * P, cols * P, 3), dtype=np.uint8)
    for k, (x_hat, _) in enumerate(results):
        r, c = divmod(k, cols)
        out[r * P:(r + 1) * P, c * P:(c + 1) * P] = to_raster(x_hat)
    return out[:bs.height, :bs.width]
