"""
Procedural HQ images, paired degradations and the binary dataset container.

Container layout (little-endian throughout):

    header   b"LRDS", u16 version, u32 count, u16 H, u16 W, u16 C, u64 seed,
             u8 split, u8 generator id, u8 task id
    record   f64 sigma, f64 r, f64 delta, u8 q, u16 kernel_size, f64 quant_base,
             H*W*C f32 HQ pixels, H*W*C f32 LQ pixels (row-major, HWC)
"""

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch

from latent_restoration.degrade import degrade_task, gaussian_blur
from latent_restoration.errors import ContractViolation
from latent_restoration.logging import log_info
from latent_restoration.models import DatasetSpec, DegradationParams, GeneratorKind, ParamRanges, TaskKind

MAGIC = b"LRDS"
VERSION = 1
HEADER = struct.Struct("<4sHIHHHQBBB")
RECORD_PARAMS = struct.Struct("<dddBHd")

SPLITS = ("train", "val")
GENERATORS = tuple(GeneratorKind)
TASKS = tuple(TaskKind)


@dataclass
class DatasetContainer:
    """Paired HQ/LQ images (N, H, W, C) float32 plus the parameters behind each LQ."""

    spec: DatasetSpec
    split: str
    hq: np.ndarray
    lq: np.ndarray
    params: List[DegradationParams] = field(default_factory=list)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ContractViolation(f"split must be one of {SPLITS}, got '{self.split}'")
        if self.hq.shape != self.lq.shape or self.hq.ndim != 4:
            raise ContractViolation(f"HQ {self.hq.shape} and LQ {self.lq.shape} must be matching (N, H, W, C) arrays")
        if len(self.params) != self.hq.shape[0]:
            raise ContractViolation(f"{len(self.params)} parameter records for {self.hq.shape[0]} images")

    def __len__(self) -> int:
        return self.hq.shape[0]

    def to_tensors(self, dtype: torch.dtype = torch.float32) -> Tuple[torch.Tensor, torch.Tensor]:
        """(hq, lq) as (N, C, H, W) tensors."""
        hq = torch.from_numpy(np.ascontiguousarray(self.hq.transpose(0, 3, 1, 2))).to(dtype)
        lq = torch.from_numpy(np.ascontiguousarray(self.lq.transpose(0, 3, 1, 2))).to(dtype)
        return hq, lq


def _gaussian_blobs(rng: np.random.Generator, size: int, channels: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    image = np.zeros((size, size, channels))
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, size, 2)
        width = rng.uniform(0.05, 0.25) * size
        amplitude = rng.uniform(0.3, 1.0, channels)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
        image += bump[:, :, None] * amplitude
    return image / max(float(image.max()), 1.0)


def _random_rectangles(rng: np.random.Generator, size: int, channels: int) -> np.ndarray:
    image = np.ones((size, size, channels)) * rng.uniform(0.0, 0.5, channels)
    for _ in range(rng.integers(2, 6)):
        y0, x0 = rng.integers(0, size - 1, 2)
        h, w = rng.integers(2, max(3, size // 2) + 1, 2)
        image[y0:y0 + h, x0:x0 + w] = rng.uniform(0.0, 1.0, channels)
    return image


def _smooth_noise(rng: np.random.Generator, size: int, channels: int) -> np.ndarray:
    image = gaussian_blur(rng.standard_normal((size, size, channels)), size / 8.0, 2 * (size // 2) + 1)
    lo, hi = image.min(), image.max()
    if hi - lo < 1e-12:
        return np.full_like(image, 0.5)
    return (image - lo) / (hi - lo)


_GENERATORS = {
    GeneratorKind.GAUSSIAN_BLOBS: _gaussian_blobs,
    GeneratorKind.RANDOM_RECTANGLES: _random_rectangles,
    GeneratorKind.SMOOTH_NOISE: _smooth_noise,
}


def generate_image(kind: GeneratorKind, size: int, channels: int, seed: int) -> np.ndarray:
    """One HQ image (size, size, channels) in [0, 1]."""
    rng = np.random.default_rng(seed)
    return np.clip(_GENERATORS[GeneratorKind(kind)](rng, size, channels), 0.0, 1.0)


def synth_dataset(spec: DatasetSpec, ranges: ParamRanges, split: str = "train", run_id: str = "") -> DatasetContainer:
    """Deterministic paired dataset for one split.

    Record i draws its image and its degradation from
    ``SeedSequence([spec.seed, split_index, i])``, so every record is
    reproducible on its own.
    """
    if split not in SPLITS:
        raise ContractViolation(f"split must be one of {SPLITS}, got '{split}'")
    count = spec.count if split == "train" else spec.val_count
    split_index = SPLITS.index(split)
    size, channels = spec.image_size, spec.channels
    hq = np.empty((count, size, size, channels), dtype=np.float32)
    lq = np.empty_like(hq)
    params = []
    for i in range(count):
        image_seed, degrade_seed = np.random.SeedSequence([spec.seed, split_index, i]).generate_state(2)
        x = generate_image(spec.generator, size, channels, int(image_seed))
        y, p = degrade_task(x, spec.task, ranges, int(degrade_seed), spec.sr_factor, spec.mask_fraction)
        hq[i] = x
        lq[i] = y
        params.append(p)
    log_info(
        "Dataset synthesized", run_id=run_id, stage="synth", split=split, count=count,
        generator=GeneratorKind(spec.generator).value, task=TaskKind(spec.task).value,
    )
    return DatasetContainer(spec=spec, split=split, hq=hq, lq=lq, params=params)


def degrade_dataset(
    container: DatasetContainer,
    ranges: ParamRanges,
    seed: int,
    task: Optional[TaskKind] = None,
    run_id: str = "",
) -> DatasetContainer:
    """Replace every LQ image with a fresh degradation of its HQ image.

    Record i draws from ``SeedSequence([seed, i])``; HQ pixels are kept.
    """
    task = TaskKind(task or container.spec.task)
    spec = container.spec.model_copy(update={"task": task})
    lq = np.empty_like(container.hq)
    params = []
    for i, x in enumerate(container.hq):
        degrade_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        y, p = degrade_task(x, task, ranges, degrade_seed, spec.sr_factor, spec.mask_fraction)
        lq[i] = y
        params.append(p)
    log_info("Dataset degraded", run_id=run_id, stage="degrade", records=len(params), task=task.value, seed=seed)
    return DatasetContainer(spec=spec, split=container.split, hq=container.hq.copy(), lq=lq, params=params)


def encode_dataset(container: DatasetContainer) -> bytes:
    n, h, w, c = container.hq.shape
    spec = container.spec
    parts = [HEADER.pack(
        MAGIC, VERSION, n, h, w, c, spec.seed, SPLITS.index(container.split),
        GENERATORS.index(GeneratorKind(spec.generator)), TASKS.index(TaskKind(spec.task)),
    )]
    for i, p in enumerate(container.params):
        parts.append(RECORD_PARAMS.pack(p.sigma, p.r, p.delta, p.q, p.kernel_size, p.quant_base))
        parts.append(container.hq[i].astype("<f4").tobytes())
        parts.append(container.lq[i].astype("<f4").tobytes())
    return b"".join(parts)


def dataset_hash(container: DatasetContainer) -> str:
    """SHA-256 of the encoded container."""
    return hashlib.sha256(encode_dataset(container)).hexdigest()


def save_dataset(container: DatasetContainer, path: Union[str, Path]) -> str:
    """Write the container; returns its SHA-256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_dataset(container)
    path.write_bytes(payload)
    digest = hashlib.sha256(payload).hexdigest()
    log_info("Dataset written", path=str(path), records=len(container), sha256=digest)
    return digest


def load_dataset(path: Union[str, Path], spec: Optional[DatasetSpec] = None) -> DatasetContainer:
    """Read a container written by ``save_dataset``.

    Only the fields stored in the header are recovered into the spec; pass
    ``spec`` to keep the remaining ones.

    Raises:
        ContractViolation: On a bad magic, version, or record count
    """
    payload = Path(path).read_bytes()
    if len(payload) < HEADER.size:
        raise ContractViolation(f"{path} is too short for a dataset header")
    magic, version, n, h, w, c, seed, split_index, gen_index, task_index = HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise ContractViolation(f"{path} is not a dataset container")
    if version != VERSION:
        raise ContractViolation(f"unsupported dataset version {version}")
    if h != w:
        raise ContractViolation(f"only square images are supported, got {h}x{w}")

    pixels = h * w * c
    record_size = RECORD_PARAMS.size + 2 * 4 * pixels
    if len(payload) != HEADER.size + n * record_size:
        raise ContractViolation(f"{path} holds {len(payload) - HEADER.size} record bytes, expected {n * record_size}")

    hq = np.empty((n, h, w, c), dtype=np.float32)
    lq = np.empty_like(hq)
    params = []
    offset = HEADER.size
    for i in range(n):
        sigma, r, delta, q, kernel_size, quant_base = RECORD_PARAMS.unpack_from(payload, offset)
        offset += RECORD_PARAMS.size
        params.append(DegradationParams(
            sigma=sigma, r=r, delta=delta, q=q, kernel_size=kernel_size, quant_base=quant_base,
        ))
        hq[i] = np.frombuffer(payload, dtype="<f4", count=pixels, offset=offset).reshape(h, w, c)
        offset += 4 * pixels
        lq[i] = np.frombuffer(payload, dtype="<f4", count=pixels, offset=offset).reshape(h, w, c)
        offset += 4 * pixels

    update = {
        "image_size": h, "channels": c, "seed": seed,
        "generator": GENERATORS[gen_index], "task": TASKS[task_index],
        ("count" if SPLITS[split_index] == "train" else "val_count"): n,
    }
    spec = (spec or DatasetSpec()).model_copy(update=update)
    return DatasetContainer(spec=spec, split=SPLITS[split_index], hq=hq, lq=lq, params=params)

