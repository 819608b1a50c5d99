"""
Desk-scale image restoration with latent consistency flow matching.
"""

__version__ = "0.1.0"
