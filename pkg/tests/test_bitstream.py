import struct

import numpy as np
import pytest

from plenopress.codec_model import model as model_mod
from plenopress.codec_model.entropy import GaussianParams, rate_estimate
from plenopress.codec_model.model import ModelParams
from plenopress.entropy_coder import bitstream as bsmod
from plenopress.entropy_coder.bitstream import (
    HEADER_BYTES,
    Bitstream,
    BitstreamError,
    decode_image,
    decode_patch,
    encode_image,
    encode_patch,
    prior_tables,
)
from plenopress.entropy_coder.cdf import build_cdf, shannon_bits
from plenopress.entropy_coder.rangecoder import rc_encode
from plenopress.preprocess import crop_and_align
from plenopress.synth import synth_plenoptic


def _toy_image(seed, size=64):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (3, size, size))


def test_header_layout():
    bs = Bitstream(3168, 2016, 48, 42, 66, bytes(range(16)), 3, 384, [b"abc", b""])
    data = bs.to_bytes()
    assert HEADER_BYTES == 4 + 1 + 2 * 5 + 16 + 1 + 2 + 2
    assert data[:4] == b"FPIC" and data[4] == 1
    assert struct.unpack_from("<HHHHH", data, 5) == (3168, 2016, 48, 42, 66)
    assert data[15:31] == bytes(range(16))
    assert struct.unpack_from("<BHH", data, 31) == (3, 384, 2)
    assert struct.unpack_from("<I", data, HEADER_BYTES) == (3,)
    back = Bitstream.from_bytes(data)
    assert back == bs
    assert len(bs) == len(data) and bs.bits == 8 * len(data)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: b"XXXX" + d[4:],
        lambda d: d[:4] + b"\x09" + d[5:],
        lambda d: d[:-1],
        lambda d: d + b"\x00",
        lambda d: d[:10],
    ],
)
def test_malformed_containers(mutate):
    data = Bitstream(64, 64, 48, 1, 1, bytes(16), 0, 64, [b"xyz"]).to_bytes()
    with pytest.raises(BitstreamError):
        Bitstream.from_bytes(mutate(data))


@pytest.mark.parametrize("seed", range(5))
def test_latent_channel_is_lossless(toy_params, seed):
    code = encode_patch(_toy_image(seed), toy_params)
    _, y_hat = decode_patch(code.segment, toy_params, 64)
    assert np.array_equal(y_hat, code.y_hat)


def test_decoder_shadows_encoder_parameters(toy_params, monkeypatch):
    """Record (mu, sigma) on both sides; the decoder must see exactly what the encoder saw."""
    seen = []

    class Recording(model_mod.SerialContext):
        def params_at(self, h, w):
            mu, sigma = super().params_at(h, w)
            seen.append((h, w, mu.copy(), sigma.copy()))
            return mu, sigma

    monkeypatch.setattr(bsmod, "SerialContext", Recording)
    code = encode_patch(_toy_image(9), toy_params)
    enc_side, seen[:] = list(seen), []
    decode_patch(code.segment, toy_params, 64)
    assert len(seen) == len(enc_side) == 16
    for (h1, w1, m1, s1), (h2, w2, m2, s2) in zip(enc_side, seen):
        assert (h1, w1) == (h2, w2)
        assert np.array_equal(m1, m2) and np.array_equal(s1, s2)


def test_payload_matches_table_shannon(toy_params):
    bits, ideal = 0, 0.0
    for seed in range(5):
        code = encode_patch(_toy_image(seed), toy_params)
        (zlen,) = struct.unpack_from("<I", code.segment)
        y_bytes = len(code.segment) - 4 - zlen
        tables = [build_cdf(0.0, float(s)) for s in code.sigma.transpose(1, 2, 0).ravel()]
        syms = code.symbols.transpose(1, 2, 0).ravel()
        ideal += shannon_bits(syms, tables)
        bits += 8 * y_bytes
    assert bits <= ideal * 1.001 + 5 * 32


def test_rate_estimate_within_one_percent_on_model_distributed_latents():
    """Latents drawn from the model's own Gaussians: coded bits track the estimate."""
    rng = np.random.default_rng(2)
    n = 20_000
    mu = rng.uniform(-3, 3, n).round(3)
    sigma = np.exp(rng.uniform(np.log(0.3), np.log(8), n)).round(3)
    y = rng.normal(mu, sigma)
    r = np.sign(y - mu) * np.floor(np.abs(y - mu) + 0.5)
    y_hat = r + mu
    est = rate_estimate(y_hat, GaussianParams(mu, sigma))
    data = rc_encode(r.astype(int).tolist(), [build_cdf(0.0, float(s)) for s in sigma])
    actual = 8 * len(data)
    assert abs(actual - est) / est <= 0.01


def test_image_round_trip_and_crop(small_spec, toy_params):
    pre = crop_and_align(synth_plenoptic("textured", small_spec.subgrid(2, 2)), small_spec.subgrid(2, 2), 48)
    assert (pre.width, pre.height) == (96, 96)
    latents, codes = [], []
    bs = encode_image(pre, toy_params, lambda_index=2, patch_size=64, codes=codes)
    assert bs.patch_count == 4
    back = Bitstream.from_bytes(bs.to_bytes())
    img = decode_image(back, toy_params, latents=latents)
    assert img.shape == (96, 96, 3)
    for a, c in zip(latents, codes):
        assert np.array_equal(a, c.y_hat)


def test_threads_give_identical_bytes(small_spec, toy_params):
    sub = small_spec.subgrid(2, 2)
    pre = crop_and_align(synth_plenoptic("gradient", sub), sub, 48)
    a = encode_image(pre, toy_params, patch_size=64, threads=1).to_bytes()
    b = encode_image(pre, toy_params, patch_size=64, threads=3).to_bytes()
    assert a == b


def test_model_mismatch(toy_params):
    other = ModelParams.init(N=8, M=8, heads=1, seed=8)
    bs = Bitstream(64, 64, 48, 1, 1, toy_params.model_id, 0, 64, [b""])
    with pytest.raises(BitstreamError):
        decode_image(bs, other)


def test_patch_count_checked(toy_params):
    bs = Bitstream(130, 64, 48, 1, 1, toy_params.model_id, 0, 64, [b""])
    with pytest.raises(BitstreamError):
        decode_image(bs, toy_params)


def test_corrupted_segment(toy_params):
    code = encode_patch(_toy_image(0), toy_params)
    with pytest.raises(ValueError):
        decode_patch(code.segment[:6], toy_params, 64)


def test_degenerate_all_zero_model():
    p = ModelParams.init(N=8, M=8, heads=1, seed=0)
    for k in list(p.tensors):
        if k.endswith("weight"):
            p.tensors[k] = np.zeros_like(p.tensors[k])
    code = encode_patch(_toy_image(0), p)
    assert not code.y_hat.any() and not code.z_hat.any()
    x_hat, _ = decode_patch(code.segment, p, 64)
    assert np.all(x_hat == x_hat.flat[0])
    ideal = sum(build_cdf(0.0, float(s)).cost_bits(0) for s in code.sigma.ravel())
    ideal += sum(t.cost_bits(0) for t in prior_tables(p))
    assert 8 * len(code.segment) <= ideal + 4 * 8 + 2 * 8 + 2


def test_prior_tables_one_per_channel(toy_params):
    tabs = prior_tables(toy_params)
    assert len(tabs) == toy_params.M
