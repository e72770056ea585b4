"""Image container, PNG/JPEG file boundary, bilinear resize and luma."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import CorruptDataError, UnsupportedFormatError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SUPPORTED_FORMATS = {"PNG", "JPEG"}


@dataclass(frozen=True, eq=False)
class Image:
    """H x W x C raster (C in {1, 3}) of float intensities in [0, 1], RGB order."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"expected HxWx1 or HxWx3 data, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_u8(self) -> np.ndarray:
        return np.clip(np.rint(self.data * 255.0), 0, 255).astype(np.uint8)

    @classmethod
    def from_u8(cls, arr: np.ndarray) -> "Image":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)


def load_image(path: str | os.PathLike) -> Image:
    """Decode a PNG or JPEG file.

    Grayscale sources give one channel, everything else is converted to RGB.
    Raises FileNotFoundError, UnsupportedFormatError or CorruptDataError.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        with PILImage.open(path) as im:
            if im.format not in SUPPORTED_FORMATS:
                raise UnsupportedFormatError(f"{path}: unsupported container {im.format}")
            im.load()
            if im.mode in ("L", "LA", "I;16", "I", "1"):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            arr = np.asarray(im)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"{path}: not a PNG or JPEG file") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, UnsupportedFormatError):
            raise
        raise CorruptDataError(f"{path}: {exc}") from exc
    return Image.from_u8(arr)


def save_image(img: Image, path: str | os.PathLike, quality: int = 95) -> None:
    """Write PNG (lossless) or JPEG depending on the file extension."""
    arr = img.to_u8()
    if img.channels == 1:
        arr = arr[:, :, 0]
    pil = PILImage.fromarray(arr)
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext in (".jpg", ".jpeg"):
        pil.save(path, format="JPEG", quality=quality)
    else:
        pil.save(path, format="PNG")


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Corner-aligned: output index 0 maps to 0, output n_out-1 maps to n_in-1.
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an H x W x C float array (no clamping)."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    h, w = arr.shape[:2]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    r0, r1, fr = _axis_weights(h, out_h)
    c0, c1, fc = _axis_weights(w, out_w)
    fr = fr[:, None, None]
    rows = arr[r0] * (1.0 - fr) + arr[r1] * fr
    fc = fc[None, :, None]
    return rows[:, c0] * (1.0 - fc) + rows[:, c1] * fc


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    return Image(np.clip(resize_array(img.data, out_h, out_w), 0.0, 1.0))


def to_luma(img: Image) -> Image:
    if img.channels == 1:
        return img
    return Image(np.clip(img.data @ LUMA_WEIGHTS, 0.0, 1.0))
