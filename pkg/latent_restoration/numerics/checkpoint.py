"""
Flat binary checkpoint container for parameter sets.

Layout (little-endian)::

    b"LRCK" | u16 version | u32 header length | header JSON (UTF-8) | u32 count
    per tensor: u16 name length | name | u8 dtype tag | u8 rank | rank x u32 shape | raw data

The header JSON carries the step counter, the frozen names and a free-form
metadata record.
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, BinaryIO, Dict, Optional, Tuple, Union

import numpy as np
import torch

from latent_restoration.errors import ContractViolation
from latent_restoration.logging import log_debug, log_error
from latent_restoration.numerics.tensor import ParamSet

MAGIC = b"LRCK"
VERSION = 1

_DTYPE_TAGS = {torch.float32: 0, torch.float64: 1}
_TAG_NUMPY = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_TORCH = {0: torch.float32, 1: torch.float64}


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ContractViolation(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def save_checkpoint(
    path: Union[str, Path],
    params: ParamSet,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write ``params`` to ``path`` (written to a temp file, then renamed)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(
        {"step": params.step, "frozen": sorted(params.frozen), "metadata": metadata or {}},
        sort_keys=True,
    ).encode("utf-8")

    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            if tensor.dtype not in _DTYPE_TAGS:
                raise ContractViolation(f"unsupported dtype {tensor.dtype} for '{name}'")
            tag = _DTYPE_TAGS[tensor.dtype]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", tag, tensor.dim()))
            fh.write(struct.pack(f"<{tensor.dim()}I", *tensor.shape))
            array = tensor.detach().cpu().contiguous().numpy().astype(_TAG_NUMPY[tag], copy=False)
            fh.write(array.tobytes(order="C"))
    tmp.replace(path)
    log_debug("Checkpoint written", path=str(path), tensors=len(params), step=params.step)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[ParamSet, Dict[str, Any]]:
    """Read a checkpoint; returns the parameter set and its metadata record.

    Raises:
        ContractViolation: If the file is not a checkpoint of a known version
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            if _read_exact(fh, 4) != MAGIC:
                raise ContractViolation(f"{path} is not a checkpoint file")
            version, header_len = struct.unpack("<HI", _read_exact(fh, 6))
            if version != VERSION:
                raise ContractViolation(f"unsupported checkpoint version {version}")
            header = json.loads(_read_exact(fh, header_len).decode("utf-8"))
            (count,) = struct.unpack("<I", _read_exact(fh, 4))

            tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
            for _ in range(count):
                (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
                name = _read_exact(fh, name_len).decode("utf-8")
                tag, rank = struct.unpack("<BB", _read_exact(fh, 2))
                if tag not in _TAG_NUMPY:
                    raise ContractViolation(f"unknown dtype tag {tag} for '{name}'")
                shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
                dtype = _TAG_NUMPY[tag]
                numel = int(np.prod(shape, dtype=np.int64))
                raw = _read_exact(fh, numel * dtype.itemsize)
                array = np.frombuffer(raw, dtype=dtype).reshape(shape)
                tensors[name] = torch.from_numpy(array.astype(array.dtype.newbyteorder("="), copy=True))
    except (OSError, ContractViolation) as e:
        log_error(f"Failed to load checkpoint: {e}", path=str(path))
        raise

    params = ParamSet(tensors, step=header.get("step", 0), frozen=header.get("frozen", ()))
    return params, header.get("metadata", {})
