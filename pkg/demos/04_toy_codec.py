"""
A toy learned codec, end to end
===============================

An untrained, narrow model still exercises the whole path: analysis with
global attention, hyperprior, serial context coding, container, decoding and
view-averaged quality. Its quality is poor; the point is the plumbing.
"""

import numpy as np

from plenopress.camera_geometry import canonical_tspc
from plenopress.codec_model.gradcheck import grad_check
from plenopress.codec_model.model import ModelParams
from plenopress.entropy_coder.bitstream import Bitstream, decode_image, encode_image
from plenopress.metrics import RdCurve, bd_rate
from plenopress.pipeline import evaluate_point
from plenopress.preprocess import PreprocessedImage, crop_and_align
from plenopress.render import RenderConfig
from plenopress.synth import synth_plenoptic

spec = canonical_tspc().subgrid(5, 5)
raw = synth_plenoptic("textured", spec, seed=1)
pre = crop_and_align(raw, spec, 48)
print(f"preprocessed image: {pre.width}x{pre.height}")

params = ModelParams.init(N=8, M=8, heads=1, seed=0)
bs = encode_image(pre, params, patch_size=64)
data = bs.to_bytes()
print(f"bitstream: {len(data)} bytes in {bs.patch_count} patches")

decoded = decode_image(Bitstream.from_bytes(data), params)
point = evaluate_point(raw, PreprocessedImage(decoded, 48, 5, 5, spec), 8 * len(data), RenderConfig(36))
print(f"bpp {point.bpp:.4f}, view PSNR {point.psnr:.2f} dB, view MS-SSIM {point.ms_ssim:.4f}")

# the hand-written backward passes against finite differences
for layer in ("gdn", "global_attention"):
    print(f"gradient check {layer}: max relative error {grad_check(layer, 200):.2e}")

# BD-rate between two made-up RD curves, one of them 20 % cheaper everywhere
rates = np.array([0.02, 0.04, 0.08, 0.16])
anchor = RdCurve.from_arrays(rates, [29.0, 31.5, 34.0, 36.0], label="anchor")
better = RdCurve.from_arrays(0.8 * rates, [29.0, 31.5, 34.0, 36.0], label="better")
print(f"BD-rate of the cheaper curve: {bd_rate(anchor, better).percent:+.2f} %")
