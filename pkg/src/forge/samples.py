"""Bundled sample triple for demos and smoke tests.

The files in ``forge/data`` were produced by :func:`make_sample_triple`;
regenerate them with ``python -m forge.samples <dir>``.
"""
from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .image import save_image, save_mask

SAMPLE_FILES = {"source": "sample_source.png", "mask": "sample_mask.png", "target": "sample_target.png"}


def make_sample_triple(size: int = 64):
    """Deterministic (source, mask, target): a textured blob pasted on a sky-like gradient."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    checker = ((np.arange(size)[:, None] // 4 + np.arange(size)[None, :] // 4) % 2).astype(float)
    source = np.stack([
        0.55 + 0.25 * checker * xx,
        0.35 + 0.3 * yy,
        0.2 + 0.15 * np.sin(12 * xx) * np.cos(9 * yy),
    ], axis=2)
    target = np.stack([0.2 + 0.3 * yy, 0.4 + 0.2 * yy, 0.85 - 0.3 * yy], axis=2)
    mask = ((xx - 0.5) / 0.28) ** 2 + ((yy - 0.55) / 0.22) ** 2 <= 1.0
    # 8-bit lattice so the shipped PNGs reload exactly
    source = np.floor(np.clip(source, 0, 1) * 255 + 0.5) / 255
    target = np.floor(np.clip(target, 0, 1) * 255 + 0.5) / 255
    return source, mask, target


def write_sample_triple(directory) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    source, mask, target = make_sample_triple()
    paths = {k: directory / v for k, v in SAMPLE_FILES.items()}
    save_image(source, paths["source"])
    save_mask(mask, paths["mask"])
    save_image(target, paths["target"])
    return paths


def sample_paths() -> dict:
    """Paths of the bundled sample files."""
    base = resources.files("forge") / "data"
    return {k: Path(str(base / v)) for k, v in SAMPLE_FILES.items()}


if __name__ == "__main__":
    for name, path in write_sample_triple(sys.argv[1] if len(sys.argv) > 1 else ".").items():
        print(name, path)
