"""
Frozen latent space and collapsible convolution blocks.
"""

from .autoencoder import AutoEncoder, AutoEncoderResult, build_codec, train_autoencoder
from .collapsible import CollapsibleBlock, collapse, collapse_params, collapse_weights, make_block

__all__ = [
    "AutoEncoder",
    "AutoEncoderResult",
    "CollapsibleBlock",
    "build_codec",
    "collapse",
    "collapse_params",
    "collapse_weights",
    "make_block",
    "train_autoencoder",
]
