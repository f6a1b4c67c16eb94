"""Image and mask value types plus 8-bit file I/O.

Images are float64 arrays of shape (H, W, C) with C in {1, 3} and samples in
[0, 1]. Binary masks are boolean (H, W) arrays. Soft masks are float64 (H, W)
arrays in [0, 1].
"""
from __future__ import annotations

import os

import numpy as np
from PIL import Image


class ImageFormatError(ValueError):
    """Raised for unsupported, unreadable or alpha-carrying image files."""


class ShapeMismatchError(ValueError):
    pass


SUPPORTED_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")


def as_image(img) -> np.ndarray:
    """Validate ``img`` and return it as an (H, W, C) float64 array.

    A 2-D array is promoted to a single-channel image.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected an HxWx1 or HxWx3 image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must have positive height and width")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite samples")
    return arr


def as_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ValueError(f"expected an HxW mask, got shape {arr.shape}")
    if arr.dtype != np.bool_:
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("binary mask samples must be exactly 0 or 1")
        arr = arr.astype(bool)
    return arr


def as_soft_mask(mask) -> np.ndarray:
    arr = np.asarray(mask, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ValueError(f"expected an HxW soft mask, got shape {arr.shape}")
    if np.any(~np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("soft mask samples must lie in [0, 1]")
    return arr


def check_same_size(*arrays) -> tuple[int, int]:
    """Return the shared (H, W) of ``arrays`` or raise ShapeMismatchError."""
    sizes = {tuple(np.shape(a)[:2]) for a in arrays}
    if len(sizes) != 1:
        raise ShapeMismatchError(f"spatial dimensions differ: {sorted(sizes)}")
    return sizes.pop()


def clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Pointwise ``mask * img`` with the mask broadcast over channels."""
    return img * as_mask(mask)[:, :, None]


def complement(mask: np.ndarray) -> np.ndarray:
    return ~as_mask(mask)


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] samples to bytes with round-half-up."""
    scaled = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5)
    return scaled.astype(np.uint8)


def _open_8bit(path) -> Image.Image:
    path = os.fspath(path)
    if not path.lower().endswith(SUPPORTED_SUFFIXES):
        raise ImageFormatError(f"{path}: unsupported format (need PNG or PGM/PPM)")
    try:
        with Image.open(path) as im:
            im.load()
            fmt = im.format
            out = im.copy()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc
    if fmt not in ("PNG", "PPM"):
        raise ImageFormatError(f"{path}: unsupported format {fmt}")
    if out.mode in ("RGBA", "LA", "PA", "RGBa", "La") or "transparency" in out.info:
        raise ImageFormatError(f"{path}: images with an alpha channel are not supported")
    if out.mode == "P":
        out = out.convert("RGB")
    elif out.mode == "1":
        out = out.convert("L")
    if out.mode not in ("L", "RGB"):
        raise ImageFormatError(f"{path}: unsupported pixel mode {out.mode} (8-bit L/RGB only)")
    return out


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PGM/PPM into an (H, W, C) float image in [0, 1]."""
    im = _open_8bit(path)
    data = np.asarray(im, dtype=np.float64) / 255.0
    return as_image(data)


def save_image(img, path) -> None:
    img = as_image(img)
    data = quantize(img)
    if data.shape[2] == 1:
        pil = Image.fromarray(data[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(data, mode="RGB")
    _save(pil, path)


def _save(pil: Image.Image, path) -> None:
    path = os.fspath(path)
    lower = path.lower()
    if lower.endswith(".png"):
        pil.save(path, format="PNG")
    elif lower.endswith((".pgm", ".ppm", ".pnm")):
        # Pillow writes binary P5/P6 with maxval 255
        pil.save(path, format="PPM")
    else:
        raise ImageFormatError(f"{path}: unsupported output format")


def load_mask(path, threshold: int = 128) -> np.ndarray:
    """Read a single-channel 8-bit file; pixels >= threshold become 1."""
    im = _open_8bit(path)
    if im.mode != "L":
        raise ImageFormatError(f"{os.fspath(path)}: mask must be single-channel")
    return np.asarray(im, dtype=np.uint8) >= threshold


def load_soft_mask(path) -> np.ndarray:
    im = _open_8bit(path)
    if im.mode != "L":
        raise ImageFormatError(f"{os.fspath(path)}: prediction must be single-channel")
    return np.asarray(im, dtype=np.float64) / 255.0


def save_mask(mask, path) -> None:
    """Write a binary mask as a 0/255 grayscale file."""
    data = as_mask(mask).astype(np.uint8) * 255
    _save(Image.fromarray(data, mode="L"), path)
