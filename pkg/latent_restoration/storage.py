"""
Image files on the local file system through OpenCV.

Images move through the package as float arrays in [0, 1], shaped (H, W, C)
with channels in RGB order for colour images.
"""

import os
from pathlib import Path
from typing import List, Union

import cv2
import numpy as np

from latent_restoration.errors import ContractViolation
from latent_restoration.logging import log_error, log_info

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def load_image(image_path: Union[str, Path], channels: int = 1) -> np.ndarray:
    """Load an image as float64 (H, W, channels) in [0, 1].

    Args:
        image_path: Local file path
        channels: 1 for grayscale, 3 for RGB

    Raises:
        FileNotFoundError: If the file doesn't exist
        ContractViolation: If the file can't be decoded or channels is unsupported
    """
    image_path = str(image_path)
    try:
        if channels not in (1, 3):
            raise ContractViolation(f"channels must be 1 or 3, got {channels}")
        if not os.path.exists(image_path):
            raise FileNotFoundError(f"Image file not found: {image_path}")

        flag = cv2.IMREAD_GRAYSCALE if channels == 1 else cv2.IMREAD_COLOR
        image = cv2.imread(image_path, flag | cv2.IMREAD_ANYDEPTH)
        if image is None:
            raise ContractViolation(f"Could not read image: {image_path}")

        scale = 65535.0 if image.dtype == np.uint16 else 255.0
        image = image.astype(np.float64) / scale
        if channels == 1:
            image = image[:, :, None]
        else:
            image = image[:, :, ::-1]
        log_info("Loaded image", path=image_path, shape=list(image.shape))
        return np.ascontiguousarray(image)

    except Exception as e:
        log_error(f"Error loading image: {e}", path=image_path)
        raise


def save_image(image: np.ndarray, save_path: Union[str, Path], bit_depth: int = 8) -> str:
    """Save a float (H, W) or (H, W, C) image in [0, 1]; values are clipped.

    Returns:
        The path that was written

    Raises:
        ContractViolation: On an unsupported shape or bit depth
    """
    save_path = str(save_path)
    try:
        if bit_depth not in (8, 16):
            raise ContractViolation(f"bit_depth must be 8 or 16, got {bit_depth}")
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 3 and image.shape[2] == 1:
            image = image[:, :, 0]
        elif image.ndim == 3 and image.shape[2] == 3:
            image = image[:, :, ::-1]
        elif image.ndim != 2:
            raise ContractViolation(f"cannot save image of shape {image.shape}")

        max_val, dtype = (255.0, np.uint8) if bit_depth == 8 else (65535.0, np.uint16)
        encoded = np.rint(np.clip(image, 0.0, 1.0) * max_val).astype(dtype)

        directory = os.path.dirname(save_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        if not cv2.imwrite(save_path, encoded):
            raise ContractViolation(f"Failed to save image: {save_path}")

        log_info("Saved image", path=save_path, shape=list(image.shape))
        return save_path

    except Exception as e:
        log_error(f"Error saving image: {e}", path=save_path)
        raise


def list_images(directory: Union[str, Path]) -> List[Path]:
    """Image files directly inside ``directory``, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Image directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
