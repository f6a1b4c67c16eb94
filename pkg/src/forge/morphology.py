"""Binary morphology with square structuring elements and replicate padding."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .image import as_mask

DEFAULT_EDGE_RADIUS = 2
DEFAULT_MIN_AREA = 64
DEFAULT_POST_DILATE = 1

# 8-connectivity
_EIGHT = np.ones((3, 3), dtype=bool)


def _check_radius(radius: int) -> int:
    if int(radius) != radius or radius < 1:
        raise ValueError(f"structuring element radius must be an integer >= 1, got {radius}")
    return int(radius)


def _windows(mask: np.ndarray, radius: int) -> np.ndarray:
    padded = np.pad(mask, radius, mode="edge")
    side = 2 * radius + 1
    return sliding_window_view(padded, (side, side))


def dilate(mask, radius: int = 1) -> np.ndarray:
    """1 where any pixel of the (2r+1)x(2r+1) footprint is 1."""
    mask = as_mask(mask)
    radius = _check_radius(radius)
    return _windows(mask, radius).any(axis=(2, 3))


def erode(mask, radius: int = 1) -> np.ndarray:
    mask = as_mask(mask)
    radius = _check_radius(radius)
    return _windows(mask, radius).all(axis=(2, 3))


def edge_mask(mask, radius: int = DEFAULT_EDGE_RADIUS) -> np.ndarray:
    """Boundary band ``|dilate(K) - erode(K)|``."""
    mask = as_mask(mask)
    return dilate(mask, radius) ^ erode(mask, radius)


def label_components(mask) -> tuple[np.ndarray, int]:
    """Label 8-connected foreground components; background is 0."""
    labels, count = ndimage.label(as_mask(mask), structure=_EIGHT)
    return labels, int(count)


def remove_small_components(mask, min_area: int = DEFAULT_MIN_AREA,
                            dilate_radius: int = DEFAULT_POST_DILATE) -> np.ndarray:
    """Drop noisy particles from a predicted mask.

    The mask is dilated first so that nearby specks are measured as one
    component; components of the dilated mask whose area is below
    ``min_area`` are discarded, and the survivors are intersected with the
    original foreground so the output never grows.
    """
    mask = as_mask(mask)
    if min_area < 0:
        raise ValueError("min_area must be non-negative")
    if not mask.any():
        return mask.copy()
    grown = dilate(mask, dilate_radius)
    labels, count = label_components(grown)
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    keep = areas >= min_area
    keep[0] = False
    return keep[labels] & mask
