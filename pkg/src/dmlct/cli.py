"""``dmlct`` command line: synth, train, denoise, eval.

Exit codes: 0 success, 2 usage/config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import (PhantomSpec, load_dir, load_slice, make_phantom_pair, read_manifest, save_slice,
                   write_manifest)
from .evaluation import (DEFAULT_WINDOW, difference_image, evaluate_image, homogeneous_regions,
                         save_gray8, write_reports)

OUT_ENV = "DMLCT_OUT"
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        raise UsageError(f"--out not given and ${OUT_ENV} unset")
    return Path(out)


def _window(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be 'lo,hi', got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"window low must be below high: {text!r}")
    return lo, hi


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} directory {p} does not exist")
    if not any(p.glob("*.cthu")):
        raise UsageError(f"{what} directory {p} holds no .cthu slices")
    return p


# -- synth ------------------------------------------------------------------------

def run_synth(spec_file, out_dir) -> dict:
    spec_path = Path(spec_file)
    if not spec_path.is_file():
        raise UsageError(f"phantom spec {spec_path} not found")
    try:
        spec, n_ld, n_hd = cfgmod.parse_phantom_text(spec_path.read_text(), str(spec_path))
    except cfgmod.ConfigError as exc:
        raise UsageError(str(exc)) from None
    out_dir = Path(out_dir)
    sets = make_phantom_pair(spec, n_ld, n_hd)
    entries = []
    for sub, images in (("ldct", sets.ldct), ("hdct", sets.hdct), ("clean", sets.clean_ld)):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
        for img in images:
            rel = f"{sub}/{img.id}.cthu"
            save_slice(img, out_dir / rel)
            entries.append((rel, img.domain_tag))
    write_manifest(out_dir / "manifest.tsv", entries)
    (out_dir / "phantom.ini").write_text(cfgmod.format_phantom(spec, n_ld, n_hd))
    return synth_stats(sets, spec)


def synth_stats(sets, spec: PhantomSpec) -> dict:
    ld_noise = np.concatenate([(x.pixels - c.pixels).ravel() for x, c in zip(sets.ldct, sets.clean_ld)])
    hd_noise = np.concatenate([(x.pixels - c.pixels).ravel() for x, c in zip(sets.hdct, sets.clean_hd)])

    def air_mean(images, cleans, offset):
        vals = [x.pixels[c.pixels == spec.background_hu + offset] for x, c in zip(images, cleans)]
        return float(np.concatenate(vals).mean())

    shift = air_mean(sets.hdct, sets.clean_hd, spec.domain_mean_shift) - air_mean(sets.ldct, sets.clean_ld, 0.0)
    below = sum(x.hu_range_report()["below"] for x in sets.ldct + sets.hdct)
    return {"n_ldct": len(sets.ldct), "n_hdct": len(sets.hdct), "n_clean": len(sets.clean_ld),
            "ldct_noise_std": float(ld_noise.std()), "hdct_noise_std": float(hd_noise.std()),
            "air_mean_shift": shift, "pixels_below_sane_hu": below}


# -- train ------------------------------------------------------------------------

def run_train(cfg, ldct_dir, hdct_dir, out_dir, resume=None, max_epochs=None):
    from .trainer import fit

    ldct = load_dir(_require_dir(ldct_dir, "LDCT"), "ldct")
    hdct = load_dir(_require_dir(hdct_dir, "HDCT"), "hdct")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(cfgmod.format_config(cfg))
    return fit(ldct, hdct, cfg, out_dir, resume=resume, max_epochs=max_epochs)


# -- denoise ----------------------------------------------------------------------

def run_denoise(checkpoint, in_dir, out_dir) -> list[Path]:
    from .networks import denoise_full
    from .trainer import load_generator

    ckpt = Path(checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint {ckpt} not found")
    in_dir = _require_dir(in_dir, "input")
    gen, cfg = load_generator(ckpt)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "denoise.ini").write_text(
        f"[denoise]\ncheckpoint = {ckpt.resolve()}\ninput = {in_dir.resolve()}\n\n" + cfgmod.format_config(cfg))
    written, entries = [], []
    for path in sorted(in_dir.glob("*.cthu")):
        out = denoise_full(load_slice(path), gen, cfg.wavelet_level, cfg.filter_name, cfg.hf_scale)
        save_slice(out, out_dir / path.name)
        written.append(out_dir / path.name)
        entries.append((path.name, "output"))
    write_manifest(out_dir / "manifest.tsv", entries)
    return written


# -- eval -------------------------------------------------------------------------

def run_eval(pred_dir, out_dir, ref_dir=None, mask_dir=None, input_dir=None, level=None, filter_name="db3",
             window=DEFAULT_WINDOW, diff_window=(-50.0, 50.0), margin=3) -> dict:
    """Evaluate every prediction slice; references/masks/inputs are matched by file name.

    Regions come from ``mask_dir`` (label images, 0 = background) if given,
    otherwise from homogeneous areas of the reference images.
    """
    pred_dir = _require_dir(pred_dir, "prediction")
    for d, what in ((ref_dir, "reference"), (mask_dir, "mask"), (input_dir, "input")):
        if d is not None:
            _require_dir(d, what)
    if input_dir is not None and level is None:
        raise UsageError("--input needs --level for the low-frequency audit")
    out_dir = Path(out_dir)
    diff_dir = out_dir / "diff"
    diff_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.ini").write_text(
        "[eval]\n" + "\n".join(f"{k} = {v}" for k, v in (
            ("pred", pred_dir), ("ref", ref_dir), ("masks", mask_dir), ("input", input_dir), ("level", level),
            ("filter_name", filter_name), ("window", window), ("diff_window", diff_window),
            ("margin", margin))) + "\n")
    reports = []
    for path in sorted(pred_dir.glob("*.cthu")):
        pred = load_slice(path, "output")

        def matching(d, tag):
            if d is None:
                return None
            p = Path(d) / path.name
            if not p.is_file():
                raise UsageError(f"no {p} to match prediction {path.name}")
            return load_slice(p, tag)

        ref = matching(ref_dir, "clean")
        inp = matching(input_dir, "ldct")
        masks = matching(mask_dir, "clean")
        if masks is not None:
            regions = {f"label{v:g}": masks.pixels == v for v in np.unique(masks.pixels) if v != 0}
        elif ref is not None:
            regions = homogeneous_regions(ref, margin)
        else:
            regions = {}
        reports.append(evaluate_image(pred, ref, regions, window, inp, level, filter_name))
        base = inp if inp is not None else ref
        if base is not None:
            save_gray8(difference_image(pred, base, diff_window), diff_dir / f"{path.stem}.png")
    write_reports(reports, out_dir)
    from .evaluation import aggregate_reports
    return aggregate_reports(reports)


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmlct", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic LDCT/HDCT phantom dataset")
    s.add_argument("--spec", required=True, help="phantom spec file ([phantom] + [structure ...])")
    s.add_argument("--out", help=f"output directory (default ${OUT_ENV})")

    t = sub.add_parser("train", help="train the denoiser on unpaired LDCT/HDCT slices")
    t.add_argument("--ldct", required=True)
    t.add_argument("--hdct", required=True)
    t.add_argument("--config", help="sectioned key = value config file")
    t.add_argument("--preset", choices=sorted(cfgmod.PRESETS), default="aapm")
    t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out")

    d = sub.add_parser("denoise", help="denoise every slice in a directory")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--in", dest="in_dir", required=True)
    d.add_argument("--out")

    e = sub.add_parser("eval", help="PSNR/SSIM and HU region statistics")
    e.add_argument("--pred", required=True)
    e.add_argument("--ref", help="ground-truth slices (PSNR/SSIM, homogeneous regions)")
    e.add_argument("--masks", help="region label slices, 0 = ignore")
    e.add_argument("--input", help="denoiser inputs, for the low-frequency mean audit and diff images")
    e.add_argument("--level", type=int)
    e.add_argument("--filter", default="db3")
    e.add_argument("--window", type=_window, default=DEFAULT_WINDOW, help="lo,hi HU for PSNR/SSIM")
    e.add_argument("--diff-window", type=_window, default=(-50.0, 50.0))
    e.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        out = _out_dir(args)
        if args.command == "synth":
            stats = run_synth(args.spec, out)
            for k, v in stats.items():
                print(f"{k}\t{v:.3f}" if isinstance(v, float) else f"{k}\t{v}")
        elif args.command == "train":
            try:
                cfg = cfgmod.resolve_config(args.preset, args.config, args.overrides)
            except (cfgmod.ConfigError, TypeError) as exc:
                raise UsageError(str(exc)) from None
            result = run_train(cfg, args.ldct, args.hdct, out, resume=args.resume)
            print(f"checkpoints\t{len(result.checkpoints)}\nlog\t{result.log_path}")
        elif args.command == "denoise":
            written = run_denoise(args.checkpoint, args.in_dir, out)
            print(f"denoised\t{len(written)}")
        elif args.command == "eval":
            agg = run_eval(args.pred, out, args.ref, args.masks, args.input, args.level, args.filter,
                           args.window, args.diff_window)
            for k in ("image_count", "psnr_db", "ssim"):
                if k in agg:
                    print(f"{k}\t{agg[k]}")
    except UsageError as exc:
        print(f"dmlct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure code
        print(f"dmlct: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
