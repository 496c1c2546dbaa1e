"""``satgrade`` command-line interface.

Exit status: 0 on success, 1 on usage errors, 2 on data or contract errors.
Diagnostics go to stderr; results go to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import SatgradeError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _log(msg):
    print(msg, file=sys.stderr)


def luminance(img):
    if img.ndim == 2:
        return img
    return img @ np.array([0.2126, 0.7152, 0.0722])


def _load_config(args):
    from .degradation import DegradeConfig, with_noise_std
    from .formats import read_noise_model

    if getattr(args, "config", None):
        path = Path(args.config)
        cfg = DegradeConfig.from_dict(json.loads(path.read_text()), base_dir=path.parent)
    else:
        cfg = DegradeConfig()
    if getattr(args, "noise_model", None):
        from dataclasses import replace

        cfg = replace(cfg, noise_model=read_noise_model(args.noise_model))
    if getattr(args, "noise_std", None) is not None:
        cfg = with_noise_std(cfg, args.noise_std)
    return cfg


def _load_lr(path, srgb=False):
    """LR image from a PNG or the LR block of a pair file; returns (image, pair or None)."""
    from .dataset import load_pair
    from .formats import read_png

    if str(path).endswith(".sgp"):
        pair = load_pair(path)
        return pair.lr, pair
    return read_png(path, srgb), None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_estimate_noise(args):
    from .formats import read_png, write_noise_model
    from .noise import estimate_noise_kernel

    img = luminance(read_png(args.input, args.srgb_decode))
    if args.region:
        r, c, h, w = args.region
        img = img[r : r + h, c : c + w]
    model = estimate_noise_kernel(img, args.size)
    write_noise_model(args.out, model)
    _log(f"noise std {model.std:.6g}, kernel {args.size}x{args.size} -> {args.out}")


def cmd_estimate_kernel(args):
    from .formats import read_png, write_kernel
    from .psf import estimate_kernel_pair

    sharp = luminance(read_png(args.sharp, args.srgb_decode))
    blurred = luminance(read_png(args.blurred, args.srgb_decode))
    write_kernel(args.out, estimate_kernel_pair(sharp, blurred, args.size, args.reg))


def cmd_fit_psf(args):
    from .formats import read_kernel
    from .psf import DEFAULT_BASIS, PsfMixture, fit_mixture, fit_residual

    kernel = read_kernel(args.kernel)
    kernel = kernel / kernel.sum()
    basis = DEFAULT_BASIS
    if args.basis:
        basis = PsfMixture.from_json(Path(args.basis).read_text()).sigmas
    mixture = fit_mixture(kernel, basis)
    Path(args.out).write_text(mixture.to_json() + "\n")
    _log(f"fit residual {fit_residual(mixture, kernel):.3e}")


def cmd_render_psf(args):
    from .formats import write_kernel
    from .psf import PsfMixture, render_psf

    mixture = PsfMixture.from_json(Path(args.mixture).read_text())
    write_kernel(args.out, render_psf(mixture, args.size))


def cmd_degrade(args):
    from .degradation import degrade
    from .formats import read_png, write_png

    cfg = _load_config(args)
    hr = read_png(args.input, args.srgb_decode)
    lr, recipe = degrade(hr, cfg, args.seed)
    write_png(args.out, lr, args.bits)
    if args.recipe_out:
        Path(args.recipe_out).write_text(json.dumps(recipe.to_dict(), sort_keys=True, indent=1) + "\n")


def cmd_gen_dataset(args):
    from .dataset import generate_dataset
    from .formats import read_png

    cfg = _load_config(args)
    files = sorted(Path(args.sources).glob("*.png"))
    if not files:
        raise SatgradeError(f"no PNG sources found in {args.sources}")
    sources = [read_png(f, args.srgb_decode) for f in files]
    sources = [np.repeat(s[..., None], 3, axis=2) if s.ndim == 2 else s for s in sources]
    manifest = generate_dataset(
        sources, cfg, count=args.count, patch=args.patch, master_seed=args.seed, out_dir=args.out,
        stride=args.stride, jobs=args.jobs, holdout=args.holdout, source_names=[f.name for f in files],
    )
    _log(f"wrote {manifest['count']} pairs to {args.out}")


def cmd_train(args):
    from .dataset import load_pairs
    from .formats import read_model, write_model
    from .srnet import AdamConfig, GradientSharpnessScorer, LossConfig, init_model, train

    split = None if args.split == "all" else args.split
    pairs = load_pairs(args.data, split)
    if not pairs:
        raise SatgradeError(f"no {args.split} pairs in {args.data}")
    if args.init:
        model = read_model(args.init)
    else:
        model = init_model(args.blocks, args.filters, args.kernel_size, seed=args.seed)
    scorer = GradientSharpnessScorer() if args.scorer == "proxy" else None
    result = train(
        model,
        [(p.lr, p.hr, p.recipe.scale) for p in pairs],
        AdamConfig(lr=args.lr, batch_size=args.batch),
        LossConfig(delta=args.delta, gamma=args.gamma if scorer else 0.0, scorer=scorer),
        epochs=args.epochs,
        seed=args.seed,
        max_steps=args.max_steps,
        log=_log,
    )
    write_model(args.out, result.model)
    if args.trace:
        Path(args.trace).write_text(json.dumps({"epoch_losses": result.epoch_losses}, indent=1) + "\n")


def cmd_infer(args):
    from .formats import read_model, write_png
    from .srnet import super_resolve

    model = read_model(args.model)
    lr, pair = _load_lr(args.input, args.srgb_decode)
    scale = args.scale
    out_shape = None
    if pair is not None:
        scale = pair.recipe.scale if scale is None else scale
        out_shape = pair.hr.shape[:2]
    if scale is None:
        raise UsageError("infer: --scale is required for PNG inputs")
    write_png(args.out, super_resolve(model, lr, scale, out_shape), args.bits)


def cmd_eval(args):
    from .degradation import upscale
    from .formats import read_png
    from .metrics import evaluate, psnr

    test = read_png(args.test)
    baseline = None
    if str(args.ref).endswith(".sgp"):
        from .dataset import load_pair

        pair = load_pair(args.ref)
        ref = pair.hr
        bicubic = np.clip(upscale(pair.lr, pair.recipe.scale, ref.shape[:2]), 0.0, 1.0)
        baseline = psnr(ref, bicubic)
    else:
        ref = read_png(args.ref)
    report = evaluate(ref, test)
    if args.json:
        doc = report.to_dict()
        if baseline is not None:
            doc["bicubic_psnr_db"] = baseline
        print(json.dumps(doc))
    else:
        line = f"psnr_db={report.psnr_db:.4f} ssim={report.ssim:.6f}"
        if baseline is not None:
            line += f" bicubic_psnr_db={baseline:.4f}"
        print(line)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _int4(text):
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected r,c,h,w")
    return parts


def build_parser() -> argparse.ArgumentParser:
    from .dataset import DEFAULT_COUNT, DEFAULT_PATCH, default_jobs

    parser = _Parser(prog="satgrade", description="Satellite-image degradation modelling and super-resolution.")
    parser.add_argument("--version", action="version", version=f"satgrade {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("estimate-noise", help="estimate a noise-shaping kernel from a flat patch")
    p.add_argument("--input", required=True, help="PNG containing a flat, noise-only region")
    p.add_argument("--region", type=_int4, help="crop r,c,h,w before estimating")
    p.add_argument("--size", type=int, default=15, help="kernel size (odd, <= 31)")
    p.add_argument("--srgb-decode", action="store_true", help="apply sRGB decode to the input")
    p.add_argument("--out", required=True, help="output noise-model file")
    p.set_defaults(func=cmd_estimate_noise)

    p = sub.add_parser("estimate-kernel", help="estimate a blur kernel from a sharp/blurred pair")
    p.add_argument("--sharp", required=True)
    p.add_argument("--blurred", required=True)
    p.add_argument("--size", type=int, default=15)
    p.add_argument("--reg", type=float, default=1e-4, help="Tikhonov weight (fraction of mean power)")
    p.add_argument("--srgb-decode", action="store_true")
    p.add_argument("--out", required=True, help="output SGK1 kernel")
    p.set_defaults(func=cmd_estimate_kernel)

    p = sub.add_parser("fit-psf", help="fit Gaussian-mixture weights to a kernel")
    p.add_argument("--kernel", required=True, help="SGK1 kernel (square)")
    p.add_argument("--basis", help="mixture JSON whose sigmas form the basis")
    p.add_argument("--out", required=True, help="output mixture JSON")
    p.set_defaults(func=cmd_fit_psf)

    p = sub.add_parser("render-psf", help="render a mixture to an SGK1 kernel")
    p.add_argument("--mixture", required=True)
    p.add_argument("--size", type=int, default=21)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_psf)

    def add_config_flags(p):
        p.add_argument("--config", help="DegradeConfig JSON (defaults when omitted)")
        p.add_argument("--noise-model", help="noise-model file replacing the config's")
        p.add_argument("--noise-std", type=float, help="pin the noise std (overrides the config range)")
        p.add_argument("--srgb-decode", action="store_true", help="sRGB-decode PNG inputs (default: linear)")

    p = sub.add_parser("degrade", help="synthesise an LR image from an HR image")
    p.add_argument("--input", required=True)
    add_config_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--recipe-out", help="write the sampled recipe as JSON")
    p.add_argument("--bits", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("gen-dataset", help="generate a training set of LR/HR pairs")
    p.add_argument("--sources", required=True, help="directory of HR PNG sources")
    add_config_flags(p)
    p.add_argument("--count", type=int, default=DEFAULT_COUNT)
    p.add_argument("--patch", type=int, default=DEFAULT_PATCH)
    p.add_argument("--stride", type=int, help="patch lattice stride (default patch // 4)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--holdout", type=float, default=0.0, help="fraction of pairs marked holdout")
    p.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes (env SATGRADE_THREADS)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train the SR network on a generated dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", choices=("train", "holdout", "all"), default="train")
    p.add_argument("--out", required=True, help="output SGM1 model")
    p.add_argument("--init", help="start from this SGM1 model")
    p.add_argument("--blocks", type=int, default=10)
    p.add_argument("--filters", type=int, default=64)
    p.add_argument("--kernel-size", type=int, default=3)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--delta", type=float, default=0.03, help="pseudo-Huber transition scale")
    p.add_argument("--gamma", type=float, default=0.001, help="perceptual weight (needs --scorer)")
    p.add_argument("--scorer", choices=("none", "proxy"), default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write per-epoch losses as JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve an LR image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="LR PNG or SGP1 pair (its LR block)")
    p.add_argument("--scale", type=float, help="upscaling factor (pair inputs default to their recipe)")
    p.add_argument("--srgb-decode", action="store_true")
    p.add_argument("--bits", type=int, choices=(8, 16), default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM of a test image against a reference")
    p.add_argument("--ref", required=True, help="reference PNG or SGP1 pair (its HR block)")
    p.add_argument("--test", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        _log(str(exc).rstrip())
        return 1
    except SystemExit as exc:
        # --help / --version
        return 0 if exc.code in (0, None) else 1
    except (SatgradeError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _log(f"satgrade: {exc}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
