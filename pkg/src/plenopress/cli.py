"""``plenopress`` command-line entry point.

Exit codes: 0 success, 2 usage error, 3 data contract violation, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .camera_geometry import canonical_tspc, load_spec
from .codec_model.gradcheck import PROBLEMS, grad_check
from .codec_model.model import ModelParams
from .entropy_coder.bitstream import Bitstream, decode_image, encode_image
from .imageio import read_image, read_preprocessed, sidecar_path, write_image, write_preprocessed
from .metrics import RdCurve, bd_rate, read_rd_csv, read_rd_rows, write_rd_rows
from .pipeline import default_threads, evaluate_point
from .preprocess import PreprocessedImage, crop_and_align, devignette
from .render import RenderConfig, render_views, write_view_grid
from .synth import SCENES, synth_plenoptic

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT, EXIT_IO = 0, 2, 3, 4
GRAD_TOLERANCE = 1e-4


class ContractError(Exception):
    pass


def _spec(args):
    return load_spec(args.spec) if args.spec else canonical_tspc()


def _params(args) -> ModelParams:
    if not args.params:
        raise ContractError("--params is required")
    p = ModelParams.load(args.params)
    return p if args.verify else p.astype(np.float32)


def _render_cfg(args) -> RenderConfig:
    return RenderConfig(args.patch, args.views, args.step)


def _load_source(path, spec):
    """A preprocessed image (has a sidecar) or a raw sensor capture."""
    if sidecar_path(path).exists():
        return read_preprocessed(path)
    img = read_image(path)
    if img.shape[:2] != (spec.sensor_height, spec.sensor_width):
        raise ContractError(
            f"{path}: {img.shape[1]}x{img.shape[0]} raw image does not match the "
            f"{spec.sensor_width}x{spec.sensor_height} sensor"
        )
    return img


# -- subcommands -------------------------------------------------------------------


def cmd_synth(args):
    spec = _spec(args)
    img = synth_plenoptic(args.scene, spec, seed=args.seed, parallax=args.parallax)
    write_image(args.out, img)
    print(f"wrote {args.out} ({spec.sensor_width}x{spec.sensor_height}, scene={args.scene})")


def cmd_preprocess(args):
    spec = _spec(args)
    raw = read_image(args.input)
    if args.white:
        raw = devignette(raw, read_image(args.white))
    pre = crop_and_align(raw, spec, args.d)
    write_preprocessed(args.out, pre)
    print(f"wrote {args.out} ({pre.width}x{pre.height}, d={pre.crop_size_d})")


def cmd_render(args):
    spec = _spec(args)
    cfg = _render_cfg(args)
    src = _load_source(args.input, spec)
    if isinstance(src, PreprocessedImage):
        grid = render_views(src, cfg, threads=args.threads)
    else:
        grid = render_views(src, cfg, spec, args.d or cfg.required_crop(), threads=args.threads)
    write_view_grid(grid, args.out, cfg)
    print(f"wrote {grid.V}x{grid.V} views to {args.out}")


def cmd_init_params(args):
    p = ModelParams.init(args.N, args.M, args.heads, seed=args.seed)
    p.save(args.out)
    print(f"wrote {args.out} (N={p.N}, M={p.M}, heads={p.heads}, model_id={p.model_id.hex()})")


def cmd_encode(args):
    params = _params(args)
    pre = read_preprocessed(args.input)
    if args.d is not None and args.d != pre.crop_size_d:
        raise ContractError(f"--d {args.d} disagrees with the image's d={pre.crop_size_d}")
    bs = encode_image(pre, params, args.lambda_index, args.patch_size, args.threads)
    Path(args.out).write_bytes(bs.to_bytes())
    print(f"wrote {args.out} ({len(bs)} bytes, {bs.patch_count} patches)")


def cmd_decode(args):
    params = _params(args)
    spec = _spec(args)
    bs = Bitstream.from_bytes(Path(args.input).read_bytes())
    img = decode_image(bs, params, args.threads)
    pre = PreprocessedImage(img, bs.d, bs.grid_rows, bs.grid_cols, spec)
    write_preprocessed(args.out, pre)
    print(f"wrote {args.out} ({bs.width}x{bs.height})")


def cmd_metrics(args):
    spec = _spec(args)
    cfg = _render_cfg(args)
    source = _load_source(args.reference, spec)
    decoded = read_preprocessed(args.input)
    bits = 8 * Path(args.bitstream).stat().st_size
    point = evaluate_point(source, decoded, bits, cfg, args.threads)
    rows = read_rd_rows(args.out) if args.append and Path(args.out).exists() else []
    rows.append((args.label, point))
    write_rd_rows(args.out, rows)
    print(f"{args.label}: bpp={point.bpp:.6f} psnr={point.psnr:.4f} ms_ssim={point.ms_ssim:.6f}")


def _single_curve(path) -> RdCurve:
    curves = read_rd_csv(path)
    if len(curves) != 1:
        raise ContractError(f"{path}: expected one RD curve, found {len(curves)}")
    return curves[0]


def cmd_bdrate(args):
    ref, test = _single_curve(args.reference), _single_curve(args.test)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = bd_rate(ref, test, args.metric)
    for note in result.warnings:
        print(f"warning: {note}", file=sys.stderr)
    print(f"{result.percent:+.2f}%")


def cmd_gradcheck(args):
    layers = sorted(PROBLEMS) if args.layer == "all" else [args.layer]
    worst = 0.0
    for layer in layers:
        err = grad_check(layer, args.probes, args.seed)
        worst = max(worst, err)
        status = "ok" if err <= GRAD_TOLERANCE else "FAIL"
        print(f"{layer:32s} max rel error {err:.3e}  {status}")
    if worst > GRAD_TOLERANCE:
        raise ContractError(f"gradient check exceeded {GRAD_TOLERANCE}")


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="camera spec file (key = value); default: canonical TSPC")
    common.add_argument("--threads", type=int, default=default_threads())
    common.add_argument("--verify", action="store_true", help="64-bit verification mode")
    common.add_argument("-v", "--verbose", action="store_true")

    render = argparse.ArgumentParser(add_help=False)
    render.add_argument("--patch", type=int, default=36, help="patch size p")
    render.add_argument("--views", type=int, default=5, help="views per side V")
    render.add_argument("--step", type=int, default=1, help="view step s")

    ap = argparse.ArgumentParser(prog="plenopress", description="Focused plenoptic image compression toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic raw plenoptic image")
    p.add_argument("--scene", choices=SCENES, default="textured")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallax", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="crop and align microimages")
    p.add_argument("input")
    p.add_argument("--d", type=int, default=48, help="crop size")
    p.add_argument("--white", help="white image for devignetting")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("render", parents=[common, render], help="render the sub-aperture view grid")
    p.add_argument("input")
    p.add_argument("--d", type=int, help="crop size for raw input (default: smallest that fits)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("init-params", parents=[common], help="write seeded initial codec parameters")
    p.add_argument("--N", type=int, default=128)
    p.add_argument("--M", type=int, default=192)
    p.add_argument("--heads", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_params)

    p = sub.add_parser("encode", parents=[common], help="compress a preprocessed image")
    p.add_argument("input")
    p.add_argument("--params", required=True)
    p.add_argument("--lambda-index", type=int, default=0, choices=range(6))
    p.add_argument("--patch-size", type=int, default=384)
    p.add_argument("--d", type=int, help="expected crop size (checked against the image)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="decompress to a preprocessed image")
    p.add_argument("input")
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("metrics", parents=[common, render], help="bpp and view-averaged quality")
    p.add_argument("input", help="decoded preprocessed image")
    p.add_argument("--reference", required=True, help="raw capture or preprocessed source")
    p.add_argument("--bitstream", required=True)
    p.add_argument("--label", default="codec")
    p.add_argument("--append", action="store_true", help="append to an existing CSV")
    p.add_argument("--out", required=True, help="CSV file")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bdrate", parents=[common], help="BD-rate between two RD curve CSVs")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--metric", choices=("psnr", "ms_ssim"), default="psnr")
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    p.add_argument("--layer", choices=["all", *sorted(PROBLEMS)], default="all")
    p.add_argument("--probes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("plenopress: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except OSError as exc:
        print(f"plenopress {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ContractError, ValueError, KeyError) as exc:
        print(f"plenopress {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
