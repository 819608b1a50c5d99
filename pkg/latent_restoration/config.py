"""
Configuration management for training and evaluation runs.
"""

import os
from pathlib import Path
from typing import Optional

import torch


class Config:
    """Process-level settings read from the environment."""

    # Service Configuration
    SERVICE_NAME: str = os.getenv("SERVICE_NAME", "latent-restoration")
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # Environment Configuration
    ENVIRONMENT: str = os.getenv("ENVIRONMENT", "dev")  # dev, ci, production

    # Output root for run directories (datasets, checkpoints, metrics)
    OUTPUT_ROOT: str = os.getenv("LR_OUTPUT_ROOT", "runs")

    # Numerics Configuration
    # NaN/Inf screening at op boundaries; off in release runs for speed
    DEBUG_NUMERICS: bool = os.getenv("LR_DEBUG_NUMERICS", "false").lower() == "true"
    DTYPE: str = os.getenv("LR_DTYPE", "float32")  # float32, float64
    # Single-threaded by default so seeded runs are bitwise reproducible
    NUM_THREADS: int = int(os.getenv("LR_NUM_THREADS", "1"))

    # Elasticsearch Configuration (optional log shipping)
    ELASTICSEARCH_HOST: Optional[str] = os.getenv("ELASTICSEARCH_HOST")
    ELASTICSEARCH_PORT: int = int(os.getenv("ELASTICSEARCH_PORT", "9200"))

    _DTYPES = {"float32": torch.float32, "float64": torch.float64}

    @classmethod
    def get_torch_dtype(cls) -> torch.dtype:
        """Get the global tensor storage dtype.

        Raises:
            ValueError: If LR_DTYPE names an unsupported precision
        """
        try:
            return cls._DTYPES[cls.DTYPE.lower()]
        except KeyError:
            raise ValueError(
                f"Unsupported LR_DTYPE '{cls.DTYPE}', expected one of {sorted(cls._DTYPES)}"
            )

    @classmethod
    def get_output_root(cls) -> Path:
        """Get the output root directory, created on first use."""
        root = Path(cls.OUTPUT_ROOT)
        root.mkdir(parents=True, exist_ok=True)
        return root

    @classmethod
    def get_elasticsearch_url(cls) -> Optional[str]:
        """Get the Elasticsearch URL, or None when log shipping is not configured."""
        if not cls.ELASTICSEARCH_HOST:
            return None
        return f"http://{cls.ELASTICSEARCH_HOST}:{cls.ELASTICSEARCH_PORT}"
