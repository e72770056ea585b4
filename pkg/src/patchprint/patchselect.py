"""Random patch cropping, texture-diversity scoring and simplest-patch selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .errors import EmptyInputError, KTooLargeError, PatchTooLargeError
from .imagecore import LUMA_WEIGHTS, Image, resize_bilinear
from .rng import SplitMix64

DEFAULT_PATCH = 32
DEFAULT_CROPS = 64
SIMPLEST = "simplest"
MOST_COMPLEX = "most_complex"


@dataclass(frozen=True, eq=False)
class Patch:
    pixels: np.ndarray  # M x M x C
    origin_row: int
    origin_col: int
    source_id: Hashable = None

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def crop_patches(img: Image, m: int = DEFAULT_PATCH, count: int = DEFAULT_CROPS,
                 seed: int = 0, source_id: Hashable = None) -> list[Patch]:
    """Crop `count` m x m patches at SplitMix64-drawn origins (overlap allowed).

    Origins are drawn row then column, each as ``below(extent - m + 1)``.
    """
    if m > img.height or m > img.width:
        raise PatchTooLargeError(f"patch size {m} exceeds image {img.height}x{img.width}")
    if m < 2:
        raise ValueError("patch size must be at least 2")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = SplitMix64(seed)
    patches = []
    for _ in range(count):
        r = rng.below(img.height - m + 1)
        c = rng.below(img.width - m + 1)
        patches.append(Patch(img.data[r:r + m, c:c + m].copy(), r, c, source_id))
    return patches


def _direction_terms(x: np.ndarray) -> list[np.ndarray]:
    # x is (..., M, M); horizontal, vertical, diagonal, anti-diagonal.
    return [
        np.abs(x[..., :, :-1] - x[..., :, 1:]),
        np.abs(x[..., :-1, :] - x[..., 1:, :]),
        np.abs(x[..., :-1, :-1] - x[..., 1:, 1:]),
        np.abs(x[..., 1:, :-1] - x[..., :-1, 1:]),
    ]


def _planes(pixels: np.ndarray, luma: bool) -> np.ndarray:
    if luma and pixels.shape[-1] == 3:
        pixels = (pixels @ LUMA_WEIGHTS)[..., None]
    return np.moveaxis(pixels, -1, -3)  # (..., C, M, M)


def texture_diversity(p: Patch | np.ndarray, luma: bool = False) -> float:
    """Sum of absolute neighbour differences in four directions, over all channels.

    Terms are accumulated with ``math.fsum`` so the result is the correctly
    rounded sum and does not depend on evaluation order.
    """
    pixels = p.pixels if isinstance(p, Patch) else np.asarray(p, dtype=np.float64)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    planes = _planes(pixels, luma)
    return math.fsum(np.concatenate([t.ravel() for t in _direction_terms(planes)]))


def diversity_scores(patches: Sequence[Patch], luma: bool = False) -> np.ndarray:
    if not patches:
        raise EmptyInputError("no patches to score")
    stack = _planes(np.stack([p.pixels for p in patches]), luma)
    terms = _direction_terms(stack)
    n = len(patches)
    flat = np.concatenate([t.reshape(n, -1) for t in terms], axis=1)
    return np.array([math.fsum(row) for row in flat])


def select_patch(patches: Sequence[Patch], mode: str = SIMPLEST, luma: bool = False) -> Patch:
    """Lowest (or highest) diversity patch; ties go to the earliest index."""
    scores = diversity_scores(patches, luma)
    if mode == SIMPLEST:
        return patches[int(np.argmin(scores))]
    if mode == MOST_COMPLEX:
        return patches[int(np.argmax(scores))]
    raise ValueError(f"unknown selection mode {mode!r}")


def rank_patches(patches: Sequence[Patch], luma: bool = False) -> list[int]:
    scores = diversity_scores(patches, luma)
    return [int(i) for i in np.argsort(scores, kind="stable")]


def select_top_k(patches: Sequence[Patch], k: int, luma: bool = False) -> np.ndarray:
    """The k simplest patches, ascending by score, stacked into M x M x (k*C)."""
    if not patches:
        raise EmptyInputError("no patches to select from")
    if k > len(patches):
        raise KTooLargeError(f"k={k} but only {len(patches)} patches")
    if k < 1:
        raise ValueError("k must be >= 1")
    shapes = {p.pixels.shape for p in patches}
    if len(shapes) != 1:
        raise ValueError(f"patches differ in shape: {sorted(shapes)}")
    order = rank_patches(patches, luma)[:k]
    return np.concatenate([patches[i].pixels for i in order], axis=2)


def upsample_patch(p: Patch | np.ndarray, out_h: int, out_w: int) -> Image:
    pixels = p.pixels if isinstance(p, Patch) else p
    return resize_bilinear(Image(pixels), out_h, out_w)
