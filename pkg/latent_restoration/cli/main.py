"""
Command-line entry point: ``latent-restoration <subcommand> ...``.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 numeric
failure (non-finite values or diverged training).
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from latent_restoration.cli.config_io import apply_overrides, parse_assignments, parse_config, parse_ranges
from latent_restoration.cli.datasets import degrade_dataset, load_dataset, save_dataset, synth_dataset
from latent_restoration.cli.experiment import check_manifest, run_ablation, run_experiment
from latent_restoration.cli.plotting import write_csv, write_metrics_csv
from latent_restoration.config import Config
from latent_restoration.errors import ConfigError, LatentRestorationError, NumericError, StageError, TrainingError
from latent_restoration.evaluation import evaluate_pairs, gaussian_restoration_toy, verify_bound
from latent_restoration.latent import train_autoencoder
from latent_restoration.logging import log_error, log_info, setup_logger
from latent_restoration.models import BoundReport, ExperimentConfig, TaskKind
from latent_restoration.numerics import seed_everything
from latent_restoration.restore import RestorationPipeline, initial_point, restore
from latent_restoration.storage import list_images, load_image, save_image

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = parse_config(args.config) if args.config else ExperimentConfig()
    overrides = parse_assignments(args.set or [])
    return apply_overrides(config, overrides) if overrides else config


def _seeded(config: ExperimentConfig, seed: Optional[int], *keys: str) -> ExperimentConfig:
    if seed is None:
        return config
    return apply_overrides(config, {key: str(seed) for key in keys})


def cmd_synth(args: argparse.Namespace) -> int:
    config = _seeded(_load_config(args), args.seed, "dataset.seed")
    out = Path(args.output_dir)
    for split in ("train", "val"):
        container = synth_dataset(config.dataset, config.degradation, split)
        digest = save_dataset(container, out / f"{split}.lrds")
        print(f"{digest}  {split}.lrds")
    return EXIT_OK


def cmd_degrade(args: argparse.Namespace) -> int:
    config = _load_config(args)
    ranges = parse_ranges(args.ranges, config.degradation) if args.ranges else config.degradation
    seed = 0 if args.seed is None else args.seed
    task = TaskKind(args.task) if args.task else None
    degraded = degrade_dataset(load_dataset(args.input), ranges, seed, task)
    digest = save_dataset(degraded, args.output)
    print(f"{digest}  {Path(args.output).name}")
    return EXIT_OK


def cmd_train_ae(args: argparse.Namespace) -> int:
    config = _seeded(_load_config(args), args.seed, "training.seed")
    hq, _ = load_dataset(args.dataset).to_tensors(Config.get_torch_dtype())
    result = train_autoencoder(hq, config.autoencoder, seed=config.training.seed, checkpoint_path=Path(args.output))
    result.autoencoder.save(args.output, delta=result.delta)
    print(f"delta_ed={result.delta!r}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _seeded(_load_config(args), args.seed, "training.seed")
    result = run_experiment(config, run_dir=args.run_dir, autoencoder_path=args.autoencoder)
    print(f"run_dir={result.run_dir} psnr={result.metrics.psnr:.3f} lq_psnr={result.lq_metrics.psnr:.3f}")
    return EXIT_OK


def _stack(paths: List[Path], channels: int) -> torch.Tensor:
    images = np.stack([load_image(p, channels) for p in paths])
    return torch.from_numpy(images.transpose(0, 3, 1, 2).copy()).to(Config.get_torch_dtype())


def cmd_restore(args: argparse.Namespace) -> int:
    overrides = {"restore.seed": str(args.seed or 0)}
    if args.steps is not None:
        overrides["restore.M"] = str(args.steps)
    cfg = apply_overrides(_load_config(args), overrides).restore
    pipeline = RestorationPipeline.from_run_dir(args.checkpoint)
    paths = list_images(args.input_dir)
    if not paths:
        raise ConfigError(f"no images in {args.input_dir}")
    y = _stack(paths, pipeline.autoencoder.config.image_channels)
    x_hat = restore(y, pipeline, cfg).numpy().transpose(0, 2, 3, 1)
    out = Path(args.output_dir)
    for path, image in zip(paths, x_hat):
        save_image(image, out / f"{path.stem}.png", bit_depth=16)
    print(f"restored {len(paths)} images into {out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.run_dir:
        manifest = check_manifest(args.run_dir)
        print(f"manifest ok: {len(manifest['files'])} files")
    if not (args.restored_dir and args.reference_dir):
        return EXIT_OK
    restored_paths = list_images(args.restored_dir)
    reference_paths = [Path(args.reference_dir) / p.name for p in restored_paths]
    channels = args.channels
    report = evaluate_pairs(_stack(restored_paths, channels), _stack(reference_paths, channels), label=args.label)
    write_metrics_csv([report], args.output)
    print(report.model_dump_json())
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = run_ablation(config, args.key, values, seeds, root=args.output_dir)
    for row in rows:
        print(",".join(row.csv_row()))
    return EXIT_OK


def cmd_verify_bound(args: argparse.Namespace) -> int:
    seeds = range(args.seed or 0, (args.seed or 0) + args.repeats)
    reports: List[BoundReport] = []
    if args.run_dir:
        pipeline = RestorationPipeline.from_run_dir(args.run_dir)
        val = load_dataset(Path(args.run_dir) / "val.lrds")
        hq, lq = val.to_tensors(Config.get_torch_dtype())
        estimator, field = pipeline.weights(use_ema=True)
        for seed in seeds:
            with torch.no_grad():
                _, z0 = initial_point(lq, estimator, pipeline.flow.sigma_s, torch.Generator().manual_seed(seed))
            reports.append(verify_bound(
                pipeline.autoencoder, field, hq, z0, pipeline.flow.sigma_min,
                steps=pipeline.flow.K, n_lipschitz_pairs=args.pairs, seed=seed,
            ))
    else:
        for seed in seeds:
            toy = gaussian_restoration_toy(seed=seed, n=args.samples)
            reports.append(verify_bound(
                toy.autoencoder, toy.field, toy.x, toy.z0, toy.sigma_min,
                n_lipschitz_pairs=args.pairs, seed=seed,
            ))
    fields = list(BoundReport.model_fields)
    write_csv(args.output, ["seed", *fields], (
        [str(seed)] + [repr(getattr(r, f)) for f in fields] for seed, r in zip(seeds, reports)
    ))
    held = sum(r.holds for r in reports)
    print(f"bound held for {held} of {len(reports)} seeds (empirical: sampled constants)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latent-restoration", description="Latent consistency flow matching for image restoration")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="INI experiment config")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a config key, e.g. flow.beta=0.01")
    common.add_argument("--seed", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Synthesize train/val dataset containers")
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("degrade", parents=[common], help="Re-degrade the HQ images of a dataset container")
    p.add_argument("--input", required=True, help="Dataset container to read")
    p.add_argument("--output", required=True, help="Dataset container to write")
    p.add_argument("--ranges", default=None, help="Preset and/or key=lo:hi items, e.g. desk,q=50:50")
    p.add_argument("--task", choices=[t.value for t in TaskKind], default=None)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train-ae", parents=[common], help="Train and freeze the autoencoder")
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("train", parents=[common], help="Run a full experiment")
    p.add_argument("--run-dir", default=None)
    p.add_argument("--autoencoder", default=None, help="Reuse a trained autoencoder checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("restore", parents=[common], help="Restore a directory of images")
    p.add_argument("--checkpoint", required=True, help="Run directory holding the checkpoints")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("evaluate", parents=[common], help="Score restored images or check a run directory")
    p.add_argument("--run-dir", default=None)
    p.add_argument("--restored-dir", default=None)
    p.add_argument("--reference-dir", default=None)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--label", default="restored")
    p.add_argument("--output", default="metrics.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="Sweep one config key over values and seeds")
    p.add_argument("--key", required=True)
    p.add_argument("--values", required=True, help="Comma-separated values")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify-bound", parents=[common], help="Check the W2 restoration bound")
    p.add_argument("--run-dir", default=None, help="Trained run; default is the 2-D Gaussian toy")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--pairs", type=int, default=10000)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--output", default="bound.csv")
    p.set_defaults(func=cmd_verify_bound)
    return parser


def _exit_code(error: BaseException) -> int:
    if isinstance(error, StageError):
        error = error.cause
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (NumericError, TrainingError)):
        return EXIT_NUMERIC
    return EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    setup_logger(Config.SERVICE_NAME, Config.LOG_LEVEL)
    args = build_parser().parse_args(argv)
    if args.seed is not None:
        seed_everything(args.seed)
    try:
        code = args.func(args)
        log_info("Command finished", command=args.command)
        return code
    except (LatentRestorationError, OSError) as e:
        log_error(f"Command failed: {e}", command=args.command)
        print(f"error: {e}", file=sys.stderr)
        return _exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
