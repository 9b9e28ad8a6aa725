"""
Command-line entry point: ``score-recon <verb> [options]``.

Verbs: train, sample, reconstruct, tv, metrics, masks, rf, phantoms and
sweep-lambda. Experiment flags mirror the ExperimentConfig fields and may
override a Markdown experiment card given with ``--card``.
"""

import argparse
import asyncio
import csv
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from .analysis import grad_neg_log_hist, mean_image, psnr, ssim, write_histogram_csv
from .diffusion import TrainConfig, load_checkpoint, make_schedule, save_checkpoint, train, write_loss_trace
from .errors import DimensionError, ParameterError
from .experiment import ExperimentConfig, Method
from .experiment_builder import ExperimentBuilder
from .imgcore import Image, load_image, make_rng, save_image
from .masks import EVALUATION_MASKS, preset_mask, save_mask
from .phantoms import RAW_SUFFIX, PhantomKind, make_phantoms, write_phantoms
from .reports import ReconReport, SliceResult
from .runner import run_experiment, run_lambda_sweep
from .samplers import PcParams, unconditional_sample
from .scoremodel import (
    EVALUATION_NETWORKS,
    GaussianScore,
    NetConfig,
    build_scorenet,
    network_receptive_field,
    receptive_field_table,
)

logger = logging.getLogger(__name__)


def _load_dir(path: Path) -> dict[str, Image]:
    files = [path] if path.is_file() else sorted(path.glob(f"*{RAW_SUFFIX}"))
    return {p.stem: load_image(p) for p in files}


def _add_experiment_flags(p: argparse.ArgumentParser, method: bool = True) -> None:
    p.add_argument("--card", type=Path, help="Markdown experiment card")
    p.add_argument("--name")
    p.add_argument("--modality", choices=["mri", "ct"])
    p.add_argument("--mask", help="mask preset or generator (G1D4, gaussian1d, radial, ...)")
    p.add_argument("--accel", type=float)
    p.add_argument("--center-frac", type=float)
    p.add_argument("--views", type=int, help="CT projection angles")
    if method:
        p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--checkpoint", type=Path, help="score network checkpoint")
    p.add_argument("--oracle", action="store_true", help="Gaussian prior fitted to the dataset")
    p.add_argument("--lam", type=float)
    p.add_argument("--n", type=int, help="noise levels")
    p.add_argument("--seed", type=int)
    p.add_argument("--dataset", type=Path)
    p.add_argument("--output", type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-timings", action="store_true", help="leave time_s empty")
    p.add_argument("--progress", action="store_true")


def _experiment(args: argparse.Namespace, method: str | None = None) -> ExperimentConfig:
    builder = ExperimentBuilder.from_markdown(args.card) if args.card else ExperimentBuilder()
    if args.name:
        builder.set_name(args.name)
    if args.modality:
        builder.modality(args.modality)
    if args.views:
        builder.sparse_view(args.views)
    elif args.mask:
        params = {k: v for k, v in (("accel", args.accel), ("center_frac", args.center_frac)) if v is not None}
        builder.mask(args.mask, **params)
    method = method or getattr(args, "method", None)
    if method:
        builder.method(method)
    if args.checkpoint:
        builder.model_checkpoint(args.checkpoint)
    elif args.oracle:
        builder.gaussian_oracle()
    if args.lam is not None:
        builder.lam(args.lam)
    if args.n is not None:
        builder.schedule(n=args.n)
    if args.seed is not None:
        builder.seed(args.seed)
    if args.dataset:
        builder.dataset(args.dataset)
    if args.output:
        builder.output(args.output)
    if args.workers:
        builder.workers(args.workers)
    if args.no_timings:
        builder.record_timings(False)
    if not builder.name:
        builder.set_name(Path(args.output).name if args.output else "cli_experiment")
    return builder.build()


def cmd_reconstruct(args: argparse.Namespace, method: str | None = None) -> int:
    cfg = _experiment(args, method)
    report = asyncio.run(run_experiment(cfg, progress=args.progress))
    print(report.summary())
    return 0 if report.failures < len(report.rows) else 1


def cmd_tv(args: argparse.Namespace) -> int:
    return cmd_reconstruct(args, Method.TV.value)


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _experiment(args, Method.PC.value)
    lambdas = [float(v) for v in args.lambdas.split(",")]
    _, fidelities = asyncio.run(run_lambda_sweep(cfg, lambdas))
    for lam, fid in zip(lambdas, fidelities, strict=True):
        print(f"lambda={lam:g}  |Ax-y|={fid:.4e}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    dataset = list(_load_dir(args.dataset).values())
    if not dataset:
        raise ParameterError(f"No training images in {args.dataset}")
    net_cfg = NetConfig(
        depth=args.depth,
        attention=args.attention,
        base_channels=args.base_channels,
        deep_channels=args.deep_channels,
        blocks_per_stage=args.blocks,
    )
    train_cfg = TrainConfig(
        iterations=args.iterations,
        lr_peak=args.lr,
        warmup_iters=min(args.warmup, args.iterations),
        batch=args.batch,
    )
    rng = make_rng(args.seed, 2)
    model = build_scorenet(net_cfg, rng, image_size=dataset[0].shape[0])
    result = train(model, dataset, train_cfg, rng, make_schedule(args.n, 0.01, 378.0), progress=args.progress)
    save_checkpoint(args.out, result, train_cfg, extra={"seed": args.seed, "dataset": str(args.dataset)})
    if args.loss_csv:
        write_loss_trace(args.loss_csv, result.losses)
    final = f", final loss {result.losses[-1]:.4f}" if result.losses else ""
    print(f"Trained {net_cfg.label} for {train_cfg.iterations} iterations{final}")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    rng = make_rng(args.seed, 3)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        model = ckpt.ema
        shape = (args.size, args.size)
    else:
        images = list(_load_dir(args.dataset).values())
        model = GaussianScore.fit(images)
        shape = images[0].shape
    schedule = make_schedule(args.n, 0.01, 378.0)
    args.out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        x = unconditional_sample(model, shape, schedule, rng, PcParams(n=args.n), progress=args.progress)
        save_image(args.out / f"sample_{k:04d}{RAW_SUFFIX}", x)
    print(f"Wrote {args.count} samples to {args.out}")
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    if args.recon:
        recon = _load_dir(args.recon)
        reference = _load_dir(args.reference)
        rows = []
        for sid, x in recon.items():
            if sid not in reference:
                logger.warning("No reference for %s", sid)
                continue
            try:
                quality = ssim(x, reference[sid])
            except DimensionError:
                quality = None
            rows.append(SliceResult(sid, args.mask, psnr(x, reference[sid]), quality))
        report = ReconReport("metrics", args.reference.name, args.mask, "external", rows=rows)
        text = report.metrics_csv()
        if args.out:
            args.out.write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        print(report.summary(), file=sys.stderr)
    if args.dataset:
        images = list(_load_dir(args.dataset).values())
        hist_h, hist_v = grad_neg_log_hist(images, bins=args.bins)
        out = args.hist_dir or Path(".")
        out.mkdir(parents=True, exist_ok=True)
        write_histogram_csv(out / "hist_x.csv", hist_h)
        write_histogram_csv(out / "hist_y.csv", hist_v)
        save_image(out / f"mean{RAW_SUFFIX}", mean_image(images))
        print(f"Wrote gradient histograms and mean image to {out}")
    return 0


def cmd_masks(args: argparse.Namespace) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    names = args.preset or list(EVALUATION_MASKS)
    rows = []
    for name in names:
        mask = preset_mask(name, args.rows, args.cols, make_rng(args.seed, 0))
        save_mask(args.out / f"{mask.label}{RAW_SUFFIX}", mask)
        if args.png:
            from matplotlib import image as mpimg

            mpimg.imsave(args.out / f"{mask.label}.png", mask.centered(), cmap="gray")
        rows.append((mask.label, mask.kept, f"{mask.kept_fraction:.6f}", f"{mask.acceleration:.4f}"))
    with (args.out / "masks.csv").open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["mask", "kept", "kept_fraction", "acceleration"])
        writer.writerows(rows)
    for row in rows:
        print("  ".join(str(v) for v in row))
    return 0


def cmd_rf(args: argparse.Namespace) -> int:
    table = receptive_field_table(EVALUATION_NETWORKS)
    extents = {}
    for cfg in EVALUATION_NETWORKS:
        extent = network_receptive_field(cfg)
        extents[cfg.label] = "global" if extent is None else str(extent)
    lines = ["network,receptive_field,network_extent"] + [
        f"{label},{rf},{extents[label]}" for label, rf in table.items()
    ]
    if args.csv:
        args.csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
    for label, rf in table.items():
        print(f"{label:5s} {rf:5d} {extents[label]:>6s}")
    return 0


def cmd_phantoms(args: argparse.Namespace) -> int:
    images = make_phantoms(args.kind, args.size, args.count, make_rng(args.seed, 4))
    paths = write_phantoms(args.out, images)
    print(f"Wrote {len(paths)} {args.kind} phantoms to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="score-recon", description="Score-based reconstruction of undersampled MRI and sparse-view CT"
    )
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("reconstruct", help="reconstruct a dataset with a configured method")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("tv", help="total-variation reconstruction")
    _add_experiment_flags(p, method=False)
    p.set_defaults(func=cmd_tv)

    p = sub.add_parser("sweep-lambda", help="data-fidelity versus lambda with the PC sampler")
    _add_experiment_flags(p, method=False)
    p.add_argument("--lambdas", default="0.001,0.01,0.1,1", help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train a score network by denoising score matching")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--attention", action="store_true")
    p.add_argument("--base-channels", type=int, default=128)
    p.add_argument("--deep-channels", type=int, default=256)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--iterations", type=int, default=10000)
    p.add_argument("--warmup", type=int, default=5000)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--loss-csv", type=Path)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="unconditional samples from the prior")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--dataset", type=Path, help="fit a Gaussian prior to this dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("metrics", help="PSNR/SSIM tables and gradient histograms")
    p.add_argument("--recon", type=Path)
    p.add_argument("--reference", type=Path)
    p.add_argument("--mask", default="")
    p.add_argument("--out", type=Path, help="metrics CSV (stdout when omitted)")
    p.add_argument("--dataset", type=Path, help="dataset for gradient histograms and mean image")
    p.add_argument("--bins", type=int, default=101)
    p.add_argument("--hist-dir", type=Path)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("masks", help="write the named evaluation masks")
    p.add_argument("--rows", type=int, default=320)
    p.add_argument("--cols", type=int, default=320)
    p.add_argument("--preset", action="append", help="repeatable; all presets when omitted")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--png", action="store_true")
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("rf", help="receptive fields of the d=1..4 and d=4* networks")
    p.add_argument("--csv", type=Path)
    p.set_defaults(func=cmd_rf)

    p = sub.add_parser("phantoms", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=[k.value for k in PhantomKind], default=PhantomKind.SHEPP_LOGAN.value)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_phantoms)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "metrics" and args.recon and not args.reference:
        parser.error("--recon needs --reference")
    try:
        return int(args.func(args))
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
