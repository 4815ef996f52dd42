"""Command-line driver.

Subcommands: train-semantic, train-pixel, quantize, reconstruct, vrr,
export-vocab, stats.  Every command is deterministic given its --seed and
produces identical outputs for any --threads value.  Failures exit nonzero
with one machine-parseable line on stderr: ``error <CODE>: <message>``.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis, fileio, report, trainer, vocab
from .core import FeatureGrid, HierarchicalCodebook, PixelSubCodebook
from .errors import ArgumentError, ContractError, DataError, FrameError, HierVQError
from .features import (
    GrayImage,
    PatchSpec,
    load_image,
    pixel_features,
    reconstruct_image,
    save_image_pgm,
    semantic_proxy_features,
)
from .quantizer import dequantize, quantize_hierarchical

__all__ = ["main"]

_IMAGE_SUFFIXES = (".pgm", ".ppm")


def _emit(records: dict) -> None:
    sys.stdout.write(report.format_records(records))


def _list_corpus(directory: str) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"corpus directory not found: {directory}")
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not paths:
        raise DataError(f"no .pgm/.ppm images in {directory}")
    return paths


def _load_corpus(directory: str) -> list[GrayImage]:
    return [load_image(p) for p in _list_corpus(directory)]


def _square_side(dim: int, what: str) -> int:
    side = math.isqrt(dim)
    if side * side != dim:
        raise ArgumentError(f"{what} dimension {dim} is not a perfect square")
    return side


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ArgumentError(f"bad --seeds value {text!r}: {exc}") from exc
    if not seeds:
        raise ArgumentError("--seeds must list at least one integer")
    return seeds


def _add_common_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--momentum", type=float, default=0.99)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dead-code-epochs", type=int, default=2)
    p.add_argument("--init", choices=["kmeanspp", "random_sample"], default="kmeanspp")
    p.add_argument("--threads", type=int, default=None)


def _figures_enabled(args) -> bool:
    return not args.no_figures


def cmd_train_semantic(args) -> int:
    cfg = trainer.TrainConfig(
        k=args.k,
        m=args.m,
        momentum=args.momentum,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        dead_code_epochs=args.dead_code_epochs,
        init=args.init,
    )
    spec = PatchSpec(args.patch)
    if args.low > spec.patch:
        raise ArgumentError(f"--low {args.low} exceeds --patch {spec.patch}")
    if args.features:
        grids = [fileio.load_feature_grid(p) for p in args.features]
    else:
        if not args.corpus:
            raise ArgumentError("either --corpus or --features is required")
        grids = [
            semantic_proxy_features(img, spec, low=args.low)
            for img in _load_corpus(args.corpus)
        ]
    cb, metrics = trainer.train_semantic_codebook(grids, cfg, threads=args.threads)
    for m in metrics:
        print(m.record())
    d_pix = spec.patch * spec.patch
    subs = [
        PixelSubCodebook(np.zeros((cfg.m, d_pix), dtype=np.float32))
        for _ in range(cfg.k)
    ]
    hier = HierarchicalCodebook(cb, subs, momentum=cfg.momentum)
    fileio.save_codebook(hier, args.out)
    if _figures_enabled(args):
        report.render_training_figure(
            metrics, Path(args.out).with_suffix(".training.png"), "semantic codebook training"
        )
    _emit(
        {
            "out": args.out,
            "k": cb.k,
            "dim_sem": cb.dim_sem,
            "final_usage_percent": metrics[-1].usage_percent,
        }
    )
    return 0


def _semantic_bytes(hier: HierarchicalCodebook) -> bytes:
    sem = hier.semantic
    return (
        sem.vectors.tobytes()
        + sem.ema_cluster_size.tobytes()
        + sem.ema_sum.tobytes()
        + bytes([1 if sem.frozen else 0])
    )


def cmd_train_pixel(args) -> int:
    hier_in = fileio.load_codebook(args.codebook)
    if not hier_in.semantic.frozen:
        raise ContractError("input codebook's semantic part is not frozen")
    m = args.m if args.m is not None else hier_in.m
    momentum = args.momentum if args.momentum is not None else hier_in.momentum
    cfg = trainer.TrainConfig(
        k=hier_in.k,
        m=m,
        momentum=momentum,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        dead_code_epochs=args.dead_code_epochs,
        init=args.init,
    )
    patch = _square_side(hier_in.dim_pix, "pixel")
    low = _square_side(hier_in.dim_sem, "semantic")
    if low > patch:
        raise ArgumentError(f"low band {low} exceeds patch side {patch}")
    spec = PatchSpec(patch)
    images = _load_corpus(args.corpus)
    sem_grids = [semantic_proxy_features(img, spec, low=low) for img in images]
    pix_grids = [pixel_features(img, spec) for img in images]
    before = _semantic_bytes(hier_in)
    hier_out, metrics = trainer.train_pixel_subcodebooks(
        sem_grids, pix_grids, hier_in.semantic, cfg, threads=args.threads
    )
    for rec in metrics:
        print(rec.record())
    unchanged = _semantic_bytes(hier_out) == before
    fileio.save_codebook(hier_out, args.out)
    if _figures_enabled(args):
        report.render_training_figure(
            metrics, Path(args.out).with_suffix(".training.png"), "pixel sub-codebook training"
        )
    _emit(
        {
            "out": args.out,
            "m": hier_out.m,
            "vocab_size": hier_out.vocab_size,
            "semantic_unchanged": unchanged,
            "final_usage_percent": metrics[-1].usage_percent,
        }
    )
    if not unchanged:
        raise ContractError("semantic codebook changed during pixel training")
    return 0


def _features_for_image(args, hier: HierarchicalCodebook):
    patch = _square_side(hier.dim_pix, "pixel")
    low = _square_side(hier.dim_sem, "semantic")
    spec = PatchSpec(patch)
    img = load_image(args.image)
    pix = pixel_features(img, spec)
    if args.sem_features:
        sem = fileio.load_feature_grid(args.sem_features)
        if (sem.height, sem.width) != (pix.height, pix.width):
            raise ArgumentError(
                f"external semantic grid is {sem.height}x{sem.width}, image grid is "
                f"{pix.height}x{pix.width}"
            )
    else:
        sem = semantic_proxy_features(img, spec, low=low)
    return sem, pix, spec


def cmd_quantize(args) -> int:
    hier = fileio.load_codebook(args.codebook)
    sem, pix, _ = _features_for_image(args, hier)
    result = quantize_hierarchical(sem, pix, hier, threads=args.threads)
    frame = vocab.frame_image(result.tokens, args.mode)
    ids, _ = vocab.assemble_stream([], [frame], text_vocab_size=0,
                                   image_vocab_size=hier.vocab_size)
    vocab.write_id_stream(args.out, ids)
    if args.text_out:
        Path(args.text_out).write_text(vocab.frame_to_text(frame))
    _emit(
        {
            "out": args.out,
            "height": result.tokens.height,
            "width": result.tokens.width,
            "tokens": result.tokens.height * result.tokens.width,
            "frame_atoms": len(frame.tokens),
            "mode": args.mode,
        }
    )
    return 0


def cmd_reconstruct(args) -> int:
    hier = fileio.load_codebook(args.codebook)
    ids = vocab.read_id_stream(args.tokens)
    _, frames = vocab.invert_stream(ids, text_vocab_size=0)
    if len(frames) != 1:
        raise FrameError(f"token file holds {len(frames)} image segments, expected 1")
    count = len(frames[0].image_codes())
    if args.height is not None and args.width is not None:
        height, width = args.height, args.width
    elif args.height is None and args.width is None:
        side = math.isqrt(count)
        if side * side != count:
            raise FrameError(
                f"{count} tokens is not a square grid; pass --height and --width"
            )
        height = width = side
    else:
        raise ArgumentError("--height and --width must be given together")
    tokens = vocab.parse_frame(frames[0], height, width, hier.m)
    patch = _square_side(hier.dim_pix, "pixel")
    spec = PatchSpec(patch)
    concat = dequantize(tokens, hier)
    pix_part = FeatureGrid(concat.data[:, :, hier.dim_sem :])
    recon = reconstruct_image(pix_part, spec)
    save_image_pgm(recon, args.out)
    records = {"out": args.out, "height": recon.height, "width": recon.width}
    if args.ref:
        ref = load_image(args.ref)
        top = (ref.height - recon.height) // 2
        left = (ref.width - recon.width) // 2
        if top < 0 or left < 0:
            raise ArgumentError("reference image is smaller than the reconstruction")
        cropped = GrayImage(ref.data[top : top + recon.height, left : left + recon.width])
        mse, psnr = analysis.reconstruction_metrics(cropped, recon)
        records.update({"mse": mse, "psnr_db": psnr})
        if _figures_enabled(args):
            report.render_reconstruction_figure(
                cropped, recon, Path(args.out).with_suffix(".compare.png"), mse, psnr
            )
    _emit(records)
    return 0


def cmd_vrr(args) -> int:
    hier = fileio.load_codebook(args.codebook)
    images = _load_corpus(args.corpus)
    patch = _square_side(hier.dim_pix, "pixel")
    result = analysis.vrr_experiment(
        images,
        hier.semantic,
        hier,
        PatchSpec(patch),
        _parse_seeds(args.seeds),
        pooled=args.pooled,
        exclude_dc=args.exclude_dc,
        flat_epochs=args.flat_epochs,
        flat_seed=args.flat_seed,
        threads=args.threads,
    )
    records = result.records()
    _emit(records)
    out = Path(args.out)
    report.write_records(out, records)
    rows = [
        ["random", result.random_mean, result.random_spread, result.total_patches],
        ["semantic", result.semantic.vrr, 0.0, result.total_patches],
        ["flat_kmeans", result.flat_kmeans.vrr, 0.0, result.total_patches],
        ["hierarchical", result.hierarchical.vrr, 0.0, result.total_patches],
    ]
    report.write_table(out.with_suffix(".tsv"), ["scheme", "vrr", "spread", "patches"], rows)
    if _figures_enabled(args):
        report.render_vrr_figure(result, out.with_suffix(".png"))
    return 0


def cmd_export_vocab(args) -> int:
    hier = fileio.load_codebook(args.codebook)
    table = vocab.export_embedding_table(hier)
    grid = FeatureGrid(table.reshape(hier.vocab_size, 1, table.shape[1]))
    fileio.save_feature_grid(grid, args.out)
    manifest = args.manifest or str(Path(args.out).with_suffix(".manifest.tsv"))
    rows = []
    for h in range(hier.vocab_size):
        rows.append([vocab.token_string(h, hier.vocab_size), h, h // hier.m, h % hier.m])
    report.write_table(manifest, ["token", "flat", "sem", "pix"], rows)
    _emit(
        {
            "out": args.out,
            "manifest": manifest,
            "rows": table.shape[0],
            "dim": table.shape[1],
        }
    )
    return 0


def cmd_stats(args) -> int:
    hier = fileio.load_codebook(args.codebook)
    records = {
        "k": hier.k,
        "m": hier.m,
        "dim_sem": hier.dim_sem,
        "dim_pix": hier.dim_pix,
        "vocab_size": hier.vocab_size,
        "momentum": hier.momentum,
        "frozen": hier.semantic.frozen,
        "semantic_ema_mass": float(hier.semantic.ema_cluster_size.sum()),
    }
    if args.tokens:
        ids = vocab.read_id_stream(args.tokens)
        _, frames = vocab.invert_stream(ids, text_vocab_size=0)
        codes = [h for f in frames for h in f.image_codes()]
        usage = trainer.compute_usage(codes, hier.vocab_size) if codes else None
        records["token_count"] = len(codes)
        records["usage_percent"] = usage.usage_percent if usage else 0.0
    _emit(records)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiervq",
        description="Hierarchical semantic/pixel vector quantization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-semantic", help="stage 1: train the semantic codebook")
    p.add_argument("--corpus", help="directory of .pgm/.ppm images")
    p.add_argument("--features", nargs="+", help="SGHF feature files instead of images")
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--m", type=int, default=12, help="sub-codebook size reserved in the output file")
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--low", type=int, default=4)
    _add_common_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train_semantic)

    p = sub.add_parser("train-pixel", help="stage 2: train pixel sub-codebooks")
    p.add_argument("--corpus", required=True)
    p.add_argument("--codebook", required=True, help="SGHC file with a frozen semantic part")
    p.add_argument("--m", type=int, default=None, help="override the file's sub-codebook size")
    _add_common_train_flags(p)
    p.set_defaults(momentum=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train_pixel)

    p = sub.add_parser("quantize", help="image -> token stream")
    p.add_argument("--image", required=True)
    p.add_argument("--sem-features", help="SGHF file overriding the low-band proxy features")
    p.add_argument("--codebook", required=True)
    p.add_argument("--mode", choices=["generation", "understanding"], default="generation")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True, help="output SGID token file")
    p.add_argument("--text-out", help="also write the frame as token-string text")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("reconstruct", help="token stream -> image")
    p.add_argument("--tokens", required=True, help="SGID token file")
    p.add_argument("--codebook", required=True)
    p.add_argument("--height", type=int, default=None, help="token grid height (inferred if square)")
    p.add_argument("--width", type=int, default=None, help="token grid width (inferred if square)")
    p.add_argument("--ref", help="original image for mse/psnr and a comparison figure")
    p.add_argument("--out", required=True, help="output PGM image")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("vrr", help="variance-reduction report over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds for the random baseline")
    p.add_argument("--pooled", action="store_true", help="patch-weighted pooled variances")
    p.add_argument("--exclude-dc", action="store_true", help="drop the DC coefficient")
    p.add_argument("--flat-epochs", type=int, default=4)
    p.add_argument("--flat-seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True, help="report file; .tsv and .png land beside it")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_vrr)

    p = sub.add_parser("export-vocab", help="flat embedding table + token manifest")
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True, help="SGHF file holding the (k*m) x (d_sem+d_pix) table")
    p.add_argument("--manifest", help="token manifest path (default: alongside --out)")
    p.set_defaults(func=cmd_export_vocab)

    p = sub.add_parser("stats", help="codebook and token-stream statistics")
    p.add_argument("--codebook", required=True)
    p.add_argument("--tokens", help="SGID token file to compute usage over")
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HierVQError as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error E_IO: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
