"""
Experiment orchestration: synthesize, train the autoencoder, train the flow,
restore the validation split, evaluate, and leave a verifiable run directory.
"""

import hashlib
import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from latent_restoration import __version__
from latent_restoration.cli.config_io import apply_overrides, write_config
from latent_restoration.cli.datasets import save_dataset, synth_dataset
from latent_restoration.cli.plotting import (
    plot_ablation,
    plot_learning_curve,
    write_ablation_csv,
    write_learning_curve_csv,
    write_metrics_csv,
)
from latent_restoration.config import Config
from latent_restoration.errors import ContractViolation, StageError
from latent_restoration.evaluation import evaluate_pairs, psnr_per_image, w2_empirical
from latent_restoration.evaluation.transport import MAX_TRANSPORT_POINTS
from latent_restoration.latent import AutoEncoder, train_autoencoder
from latent_restoration.lcfm import LCFMTrainer
from latent_restoration.logging import log_error, log_info
from latent_restoration.models import AblationRow, EpochRecord, ExperimentConfig, MetricsReport, RestoreConfig
from latent_restoration.numerics import ParamSet, seed_everything
from latent_restoration.restore import RestorationPipeline, nfe_sweep, restore

RUN_FILES = (
    "config.ini",
    "dataset.sha256",
    "autoencoder.ckpt",
    "live.ckpt",
    "ema.ckpt",
    "metrics.csv",
    "learning_curve.csv",
    "learning_curve.svg",
)
MANIFEST = "manifest.json"


@dataclass
class RunResult:
    run_dir: Path
    config: ExperimentConfig
    metrics: MetricsReport
    lq_metrics: MetricsReport
    records: List[EpochRecord]
    pipeline: RestorationPipeline
    val: Tuple[torch.Tensor, torch.Tensor]
    delta_ed: float


def default_run_id(config: ExperimentConfig) -> str:
    return f"{config.task_name}-s{config.training.seed}"


def resolve_run_dir(config: ExperimentConfig, run_id: str) -> Path:
    if config.output_dir:
        return Path(config.output_dir)
    return Config.get_output_root() / run_id


@contextmanager
def stage(name: str, run_id: str, last_checkpoint: Callable[[], Optional[Path]] = lambda: None) -> Iterator[None]:
    """Run one stage; any failure is logged and re-raised as ``StageError``."""
    log_info("Stage started", run_id=run_id, stage=name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        checkpoint = getattr(e, "last_checkpoint", None) or last_checkpoint()
        log_error(
            f"Stage failed: {e}", run_id=run_id, stage=name, exc_info=True,
            last_checkpoint=str(checkpoint) if checkpoint else None,
        )
        raise StageError(name, e, checkpoint) from e
    log_info("Stage finished", run_id=run_id, stage=name)


def score_restoration(x_hat: torch.Tensor, hq: torch.Tensor) -> Tuple[float, float]:
    """(mean per-image PSNR, W2 over flattened images)."""
    n = min(hq.shape[0], MAX_TRANSPORT_POINTS)
    mean_psnr = float(np.mean(psnr_per_image(hq, x_hat)))
    w2 = w2_empirical(x_hat[:n].reshape(n, -1), hq[:n].reshape(n, -1))
    return mean_psnr, w2


def make_validator(trainer: LCFMTrainer, restore_cfg: RestoreConfig, run_id: str = ""):
    """Epoch-end scoring of given estimator/field weights on a validation split."""
    live_cfg = restore_cfg.model_copy(update={"use_ema": False})

    def validate(hq: torch.Tensor, lq: torch.Tensor, estimator: ParamSet, field: ParamSet) -> Tuple[float, float]:
        nets = trainer.nets_with(estimator, field)
        pipeline = RestorationPipeline(trainer.autoencoder, nets.estimator, nets.field, trainer.flow)
        return score_restoration(restore(lq, pipeline, live_cfg, run_id=run_id), hq)

    return validate


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(run_dir: Path, run_id: str, extra: Dict) -> Path:
    manifest = {
        "run_id": run_id,
        "version": __version__,
        "files": {name: _sha256(run_dir / name) for name in RUN_FILES if (run_dir / name).exists()},
        **extra,
    }
    path = run_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def check_manifest(run_dir: Union[str, Path]) -> Dict:
    """Verify a run directory against its manifest.

    Returns:
        The manifest record

    Raises:
        ContractViolation: If the manifest or any run file is missing, or a
            file no longer matches its recorded hash
    """
    run_dir = Path(run_dir)
    path = run_dir / MANIFEST
    if not path.exists():
        raise ContractViolation(f"no manifest in {run_dir}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    missing = [name for name in RUN_FILES if not (run_dir / name).exists() or name not in manifest["files"]]
    if missing:
        raise ContractViolation(f"run directory {run_dir} is missing: {', '.join(missing)}")
    changed = [name for name in RUN_FILES if _sha256(run_dir / name) != manifest["files"][name]]
    if changed:
        raise ContractViolation(f"files changed since the run finished: {', '.join(changed)}")
    return manifest


def run_experiment(
    config: ExperimentConfig,
    run_dir: Optional[Union[str, Path]] = None,
    run_id: Optional[str] = None,
    autoencoder_path: Optional[Union[str, Path]] = None,
) -> RunResult:
    """Run every stage of one experiment and write its run directory.

    Args:
        config: Validated experiment configuration
        run_dir: Output directory; defaults to ``config.output_dir`` or
            ``<output root>/<run_id>``
        run_id: Identifier for logs and the manifest
        autoencoder_path: Reuse a trained autoencoder instead of training one

    Raises:
        StageError: Naming the failed stage and the last checkpoint written
    """
    run_id = run_id or default_run_id(config)
    run_dir = Path(run_dir) if run_dir is not None else resolve_run_dir(config, run_id)
    run_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(config.training.seed)
    write_config(config, run_dir / "config.ini")
    log_info("Experiment started", run_id=run_id, run_dir=str(run_dir), seed=config.training.seed)

    with stage("synth", run_id):
        train_set = synth_dataset(config.dataset, config.degradation, "train", run_id=run_id)
        val_set = synth_dataset(config.dataset, config.degradation, "val", run_id=run_id)
        hashes = {
            "train": save_dataset(train_set, run_dir / "train.lrds"),
            "val": save_dataset(val_set, run_dir / "val.lrds"),
        }
        (run_dir / "dataset.sha256").write_text(
            "".join(f"{digest}  {split}.lrds\n" for split, digest in hashes.items()), encoding="utf-8"
        )
        dtype = Config.get_torch_dtype()
        hq, lq = train_set.to_tensors(dtype)
        val_hq, val_lq = val_set.to_tensors(dtype)

    ae_path = run_dir / "autoencoder.ckpt"
    with stage("train-ae", run_id, lambda: ae_path if ae_path.exists() else None):
        if autoencoder_path is not None:
            autoencoder, delta_ed = AutoEncoder.load(autoencoder_path)
            if delta_ed is None:
                delta_ed = autoencoder.reconstruction_error(val_hq)
        else:
            result = train_autoencoder(hq, config.autoencoder, seed=config.training.seed, checkpoint_path=ae_path, run_id=run_id)
            autoencoder, delta_ed = result.autoencoder, result.delta
        autoencoder.save(ae_path, delta=delta_ed)

    trainer: Optional[LCFMTrainer] = None
    with stage("train", run_id, lambda: trainer.last_checkpoint if trainer else None):
        trainer = LCFMTrainer(config, autoencoder, run_id=run_id, dtype=dtype)
        records = trainer.fit(
            (hq, lq), (val_hq, val_lq), run_dir=run_dir,
            validator=make_validator(trainer, config.restore, run_id),
        )
        write_learning_curve_csv(records, run_dir / "learning_curve.csv")
        plot_learning_curve(records, run_dir / "learning_curve.svg")

    with stage("restore", run_id, lambda: trainer.last_checkpoint):
        pipeline = RestorationPipeline.from_trainer(trainer)
        x_hat = restore(val_lq, pipeline, config.restore, run_id=run_id)

    with stage("evaluate", run_id, lambda: trainer.last_checkpoint):
        metrics = evaluate_pairs(x_hat, val_hq, label="restored")
        lq_metrics = evaluate_pairs(val_lq, val_hq, label="lq")
        write_metrics_csv([metrics, lq_metrics], run_dir / "metrics.csv")
        write_manifest(run_dir, run_id, {
            "dataset": hashes,
            "delta_ed": delta_ed,
            "seed": config.training.seed,
            "epochs": len(records),
        })
        check_manifest(run_dir)

    log_info(
        "Experiment finished", run_id=run_id, run_dir=str(run_dir),
        psnr=metrics.psnr, lq_psnr=lq_metrics.psnr, frechet=metrics.frechet,
    )
    return RunResult(
        run_dir=run_dir, config=config, metrics=metrics, lq_metrics=lq_metrics,
        records=records, pipeline=pipeline, val=(val_hq, val_lq), delta_ed=delta_ed,
    )


def _row(key: str, value: str, seed: int, restored: MetricsReport, lq: MetricsReport, nfe: int) -> AblationRow:
    return AblationRow(
        key=key, value=value, seed=seed, psnr=restored.psnr, lq_psnr=lq.psnr,
        frechet=restored.frechet, ssim=restored.ssim, nfe=nfe,
    )


def run_ablation(
    config: ExperimentConfig,
    key: str,
    values: Sequence[str],
    seeds: Sequence[int] = (0, 1, 2),
    root: Optional[Union[str, Path]] = None,
    run_id: str = "ablate",
) -> List[AblationRow]:
    """One row per (value, seed) of a dotted config key.

    Keys under ``restore.`` only change inference, so each seed is trained
    once and restored per value; every other key retrains.
    """
    root = Path(root) if root is not None else Config.get_output_root() / f"{run_id}-{key}"
    root.mkdir(parents=True, exist_ok=True)
    rows: List[AblationRow] = []

    for seed in seeds:
        seeded = apply_overrides(config, {"training.seed": str(seed), "restore.seed": str(seed)})
        if key.startswith("restore."):
            result = run_experiment(seeded, run_dir=root / f"seed{seed}", run_id=f"{run_id}-s{seed}")
            val_hq, val_lq = result.val
            if key == "restore.M":
                restored = nfe_sweep(val_lq, result.pipeline, [int(v) for v in values], seeded.restore, run_id=run_id)
                for value in values:
                    report = evaluate_pairs(restored[int(value)], val_hq, label=f"M={value}")
                    rows.append(_row(key, value, seed, report, result.lq_metrics, int(value)))
                continue
            for value in values:
                cfg = apply_overrides(seeded, {key: value}).restore
                report = evaluate_pairs(restore(val_lq, result.pipeline, cfg, run_id=run_id), val_hq, label=f"{key}={value}")
                rows.append(_row(key, value, seed, report, result.lq_metrics, cfg.M))
        else:
            for value in values:
                cfg = apply_overrides(seeded, {key: value})
                result = run_experiment(cfg, run_dir=root / f"{key}={value}" / f"seed{seed}", run_id=f"{run_id}-s{seed}")
                rows.append(_row(key, value, seed, result.metrics, result.lq_metrics, cfg.restore.M))
        log_info("Ablation seed finished", run_id=run_id, stage="ablate", key=key, seed=seed, rows=len(rows))

    write_ablation_csv(rows, root / "ablation.csv")
    plot_ablation(rows, root / "ablation.svg")
    return rows
