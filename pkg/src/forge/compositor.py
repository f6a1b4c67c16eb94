"""Copy-paste composition, boundary refinement and robustness attacks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy.fft import dctn, idctn

from .image import as_image, as_mask, check_same_size, ShapeMismatchError
from .morphology import DEFAULT_EDGE_RADIUS, edge_mask


@dataclass(frozen=True)
class CompositeSample:
    image: np.ndarray
    mask: np.ndarray
    edge: np.ndarray


@dataclass(frozen=True)
class AttackSpec:
    kind: Literal["jpeg", "scale"]
    quality: Optional[int] = None
    ratio: Optional[float] = None

    def __post_init__(self):
        if self.kind == "jpeg":
            if self.quality is None or self.ratio is not None:
                raise ValueError("jpeg attack takes a quality and no ratio")
            if isinstance(self.quality, bool) or int(self.quality) != self.quality \
                    or not 1 <= self.quality <= 100:
                raise ValueError(f"jpeg quality must be an integer in [1, 100], got {self.quality}")
        elif self.kind == "scale":
            if self.ratio is None or self.quality is not None:
                raise ValueError("scale attack takes a ratio and no quality")
            if not 0.0 < self.ratio <= 1.0:
                raise ValueError(f"scale ratio must lie in (0, 1], got {self.ratio}")
        else:
            raise ValueError(f"unknown attack kind {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "jpeg":
            return {"kind": "jpeg", "quality": int(self.quality)}
        return {"kind": "scale", "ratio": float(self.ratio)}

    @classmethod
    def from_dict(cls, data: dict) -> "AttackSpec":
        extra = set(data) - {"kind", "quality", "ratio"}
        if extra:
            raise ValueError(f"unknown attack fields: {sorted(extra)}")
        return cls(kind=data.get("kind"), quality=data.get("quality"), ratio=data.get("ratio"))


def compose(source, mask, target, radius: int = DEFAULT_EDGE_RADIUS) -> CompositeSample:
    """Paste ``source`` over ``target`` wherever ``mask`` is set."""
    source, target, mask = as_image(source), as_image(target), as_mask(mask)
    check_same_size(source, mask, target)
    if source.shape[2] != target.shape[2]:
        raise ShapeMismatchError("source and target channel counts differ")
    image = np.where(mask[:, :, None], source, target)
    return CompositeSample(image=image, mask=mask.copy(), edge=edge_mask(mask, radius))


def refine(image, mask, target, pred_boundary, radius: int = DEFAULT_EDGE_RADIUS) -> CompositeSample:
    """Swap predicted boundary pixels back to the authentic target.

    The returned image takes ``target`` on the boundary and keeps ``image``
    elsewhere; the new mask is ``K - K*P``.
    """
    image, target = as_image(image), as_image(target)
    mask, pred_boundary = as_mask(mask), as_mask(pred_boundary)
    check_same_size(image, mask, target, pred_boundary)
    if image.shape[2] != target.shape[2]:
        raise ShapeMismatchError("image and target channel counts differ")
    refined = np.where(pred_boundary[:, :, None], target, image)
    new_mask = mask & ~pred_boundary
    return CompositeSample(image=refined, mask=new_mask, edge=edge_mask(new_mask, radius))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def scaled_size(height: int, width: int, ratio: float) -> tuple[int, int]:
    return _round_half_up(height * ratio), _round_half_up(width * ratio)


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres: output centre i+0.5 maps to input coordinate (i+0.5)*n_in/n_out
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img, height: int, width: int) -> np.ndarray:
    img = as_image(img)
    y0, y1, fy = _bilinear_axis(img.shape[0], height)
    x0, x1, fx = _bilinear_axis(img.shape[1], width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    rows = img[y0] * (1.0 - fy) + img[y1] * fy
    return rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx


def resize_nearest(mask, height: int, width: int) -> np.ndarray:
    mask = as_mask(mask)
    n_h, n_w = mask.shape
    ys = np.minimum(np.floor((np.arange(height) + 0.5) * n_h / height).astype(int), n_h - 1)
    xs = np.minimum(np.floor((np.arange(width) + 0.5) * n_w / width).astype(int), n_w - 1)
    return mask[np.ix_(ys, xs)]


def attack_scale(img, mask, ratio: float):
    """Downscale an image (bilinear) and its mask (nearest neighbour)."""
    AttackSpec("scale", ratio=ratio)
    img, mask = as_image(img), as_mask(mask)
    check_same_size(img, mask)
    h, w = scaled_size(img.shape[0], img.shape[1], ratio)
    if h < 1 or w < 1:
        raise ValueError(f"scaling {img.shape[:2]} by {ratio} leaves an empty image")
    if (h, w) == img.shape[:2]:
        return img.copy(), mask.copy()
    return resize_bilinear(img, h, w), resize_nearest(mask, h, w) > 0


# Standard JPEG luminance table (ITU-T T.81 Annex K.1)
LUMINANCE_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)


def quantization_table(quality: int) -> np.ndarray:
    """IJG quality scaling of the luminance table."""
    AttackSpec("jpeg", quality=quality)
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    table = (LUMINANCE_TABLE * scale + 50) // 100
    return np.clip(table, 1, 255)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def attack_jpeg(img, quality: int) -> np.ndarray:
    """Block-DCT quantization round trip, channel by channel."""
    img = as_image(img)
    table = quantization_table(quality).astype(np.float64)
    h, w, c = img.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge") * 255.0 - 128.0
    bh, bw = padded.shape[0] // 8, padded.shape[1] // 8
    # (C, bh, bw, 8, 8) view of the blocks
    blocks = padded.transpose(2, 0, 1).reshape(c, bh, 8, bw, 8).transpose(0, 1, 3, 2, 4)
    coeffs = dctn(blocks, type=2, axes=(-2, -1), norm="ortho")
    coeffs = _round_half_away(coeffs / table) * table
    restored = idctn(coeffs, type=2, axes=(-2, -1), norm="ortho")
    out = restored.transpose(0, 1, 3, 2, 4).reshape(c, bh * 8, bw * 8).transpose(1, 2, 0)
    out = (out + 128.0) / 255.0
    return np.clip(out[:h, :w], 0.0, 1.0)


def apply_attack(img, mask, spec: AttackSpec):
    """Run ``spec`` on an (image, mask) pair; jpeg leaves the mask alone."""
    if spec.kind == "jpeg":
        return attack_jpeg(img, spec.quality), as_mask(mask).copy()
    return attack_scale(img, mask, spec.ratio)


def psnr(a, b) -> float:
    mse = float(np.mean((as_image(a) - as_image(b)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
