"""Gaussian blur, DCT-quantization JPEG emulation and labelled augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagecore import Image
from .patchselect import Patch
from .rng import SplitMix64

BLURRY, COMPRESSED, INTACT = 0, 1, 2
LABEL_NAMES = ("blurry", "compressed", "intact")

# fmt: off
LUMA_QUANT_TABLE = np.array([
    [16, 11, 10, 16,  24,  40,  51,  61],
    [12, 12, 14, 19,  26,  58,  60,  55],
    [14, 13, 16, 24,  40,  57,  69,  56],
    [14, 17, 22, 29,  51,  87,  80,  62],
    [18, 22, 37, 56,  68, 109, 103,  77],
    [24, 35, 55, 64,  81, 104, 113,  92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103,  99],
], dtype=np.float64)
# fmt: on


@dataclass(frozen=True)
class DegradationLabel:
    w_hat: tuple[float, float, float]

    def __post_init__(self):
        if sorted(self.w_hat) != [0.0, 0.0, 1.0]:
            raise ValueError(f"label must be one-hot, got {self.w_hat}")

    @classmethod
    def of(cls, kind: int) -> "DegradationLabel":
        w = [0.0, 0.0, 0.0]
        w[kind] = 1.0
        return cls(tuple(w))

    @property
    def kind(self) -> int:
        return self.w_hat.index(1.0)

    def as_array(self) -> np.ndarray:
        return np.array(self.w_hat)


@dataclass(frozen=True)
class DegradationConfig:
    probability: float = 0.10
    sigma_range: tuple[float, float] = (0.0, 1.0)
    qf_range: tuple[int, int] = (90, 100)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must be in [0, 1]")
        lo, hi = self.sigma_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad sigma_range {self.sigma_range}")
        qlo, qhi = self.qf_range
        if not 1 <= qlo <= qhi <= 100:
            raise ValueError(f"bad qf_range {self.qf_range}")


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(k * k) / (2.0 * sigma * sigma))
    return w / w.sum()


def blur_array(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the first two axes, mirror-reflected edges."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return arr.copy()
    w = gaussian_kernel1d(sigma)
    r = len(w) // 2
    h, wd = arr.shape[:2]
    pad = [(r, r), (0, 0)] + [(0, 0)] * (arr.ndim - 2)
    padded = np.pad(arr, pad, mode="symmetric")
    out = sum(w[i] * padded[i:i + h] for i in range(len(w)))
    pad = [(0, 0), (r, r)] + [(0, 0)] * (arr.ndim - 2)
    padded = np.pad(out, pad, mode="symmetric")
    return sum(w[i] * padded[:, i:i + wd] for i in range(len(w)))


def gaussian_blur(img: Image, sigma: float) -> Image:
    if sigma == 0:
        return img
    return Image(np.clip(blur_array(img.data, sigma), 0.0, 1.0))


def quant_table(qf: int) -> np.ndarray:
    """libjpeg quality scaling of the standard luminance table."""
    if not 1 <= qf <= 100:
        raise ValueError("quality factor must be in [1, 100]")
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    return np.clip(np.floor((LUMA_QUANT_TABLE * scale + 50) / 100), 1, 255)


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.cos((2 * x + 1) * k * np.pi / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


DCT8 = _dct_matrix()


def _rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def _ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _quantize_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge") - 128.0
    bh, bw = padded.shape[0] // 8, padded.shape[1] // 8
    blocks = padded.reshape(bh, 8, bw, 8).transpose(0, 2, 1, 3)
    coef = DCT8 @ blocks @ DCT8.T
    coef = np.round(coef / table) * table
    blocks = DCT8.T @ coef @ DCT8
    out = blocks.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8) + 128.0
    return out[:h, :w]


def jpeg_array(arr: np.ndarray, qf: int) -> np.ndarray:
    """JPEG-style lossy round trip of an H x W x C array (C in {1, 3}).

    No entropy coding and no chroma subsampling; every plane is quantized with
    the scaled luminance table. The result is rounded to 8-bit levels the way
    a decoder emits samples, then mapped back to [0, 1].
    """
    table = quant_table(qf)
    x = arr * 255.0
    color = arr.shape[2] == 3
    planes = _rgb_to_ycbcr(x) if color else x
    out = np.stack([_quantize_plane(planes[..., c], table) for c in range(planes.shape[2])],
                   axis=-1)
    if color:
        out = _ycbcr_to_rgb(out)
    return np.clip(np.rint(out), 0.0, 255.0) / 255.0


def jpeg_compress(img: Image, qf: int) -> Image:
    return Image(jpeg_array(img.data, qf))


def degrade_array(arr: np.ndarray, kind: int, strength: float) -> np.ndarray:
    """Apply one degradation to an H x W x (k*C) stack, per 1- or 3-channel group."""
    if kind == INTACT:
        return arr
    if kind == BLURRY:
        return np.clip(blur_array(arr, strength), 0.0, 1.0)
    c = arr.shape[2]
    group = 3 if c % 3 == 0 else 1
    return np.concatenate([jpeg_array(arr[:, :, g:g + group], int(strength))
                           for g in range(0, c, group)], axis=2)


def draw_degradation(cfg: DegradationConfig, rng: SplitMix64) -> tuple[int, float]:
    """Exclusive choice from one uniform draw: blur below p, compress in [p, 2p)."""
    u = rng.next_float()
    p = cfg.probability
    if u < p:
        return BLURRY, rng.uniform(*cfg.sigma_range)
    if u < 2 * p:
        lo, hi = cfg.qf_range
        return COMPRESSED, float(lo + rng.below(hi - lo + 1))
    return INTACT, 0.0


def augment(patch: Patch | np.ndarray, cfg: DegradationConfig,
            rng: SplitMix64) -> tuple[Patch | np.ndarray, DegradationLabel]:
    kind, strength = draw_degradation(cfg, rng)
    pixels = patch.pixels if isinstance(patch, Patch) else patch
    out = degrade_array(pixels, kind, strength)
    if isinstance(patch, Patch):
        out = Patch(out, patch.origin_row, patch.origin_col, patch.source_id)
    return out, DegradationLabel.of(kind)
