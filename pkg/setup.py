"""
Setup configuration for latent_restoration package.
"""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="latent-restoration",
    version="0.1.0",
    author="vfrog",
    description="Desk-scale latent consistency flow matching for image restoration",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=("tests", "tests.*", "examples", "examples.*")),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.11",
    ],
    python_requires=">=3.11",
    install_requires=[
        "pydantic>=2.5.0",
        "numpy>=1.24",
        # Headless build: resampling, SSIM windows and PNG I/O only, no GUI.
        "opencv-python-headless>=4.8",
        "torch>=2.1",
        "scipy>=1.10",
        "matplotlib>=3.7",
    ],
    extras_require={
        # Keep Python client compatible with the Elasticsearch 8.x log cluster.
        "elasticsearch": ["elasticsearch>=8.11.0,<9"],
        "test": ["pytest>=7.4"],
    },
    entry_points={
        "console_scripts": [
            "latent-restoration=latent_restoration.cli.main:main",
        ],
    },
)
