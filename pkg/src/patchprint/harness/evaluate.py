"""Scoring manifests, optionally after whole-image blur or compression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..degrade import gaussian_blur, jpeg_compress
from ..errors import EmptyInputError
from ..imagecore import Image
from ..models import (Essp, PipelineConfig, SspClassifier, classify_patches, essp_restore,
                      extract_input_patch)
from .data import Sample
from .metrics import Metrics, compute_metrics
from .train import ImageCache

SSP, ESSP = "ssp", "essp"


@dataclass(frozen=True)
class Degradation:
    """Whole-image degradation applied before patch extraction."""

    sigma: float | None = None
    qf: int | None = None

    def __post_init__(self):
        if self.sigma is not None and self.qf is not None:
            raise ValueError("choose blur or compression, not both")

    def apply(self, img: Image) -> Image:
        if self.sigma is not None:
            return gaussian_blur(img, self.sigma)
        if self.qf is not None:
            return jpeg_compress(img, self.qf)
        return img

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "qf": self.qf}


def score_images(images: list[Image], clf: SspClassifier, cfg: PipelineConfig,
                 front: Essp | None = None, batch: int = 32) -> np.ndarray:
    """P(real) for each image; `front` switches on restoration (ESSP)."""
    scores = []
    for i in range(0, len(images), batch):
        pixels = [extract_input_patch(img, cfg) for img in images[i:i + batch]]
        if front is not None:
            pixels = [essp_restore(p, front) for p in pixels]
        scores.append(classify_patches(pixels, clf, cfg))
    return np.concatenate(scores) if scores else np.zeros(0)


def score_samples(samples: list[Sample], clf: SspClassifier, cfg: PipelineConfig,
                  front: Essp | None = None, degradation: Degradation | None = None,
                  cache: ImageCache | None = None, batch: int = 32) -> np.ndarray:
    cache = cache or ImageCache(cfg.image_size)
    scores = []
    for i in range(0, len(samples), batch):
        images = [cache.get(s.path) for s in samples[i:i + batch]]
        if degradation is not None:
            images = [degradation.apply(img) for img in images]
        scores.append(score_images(images, clf, cfg, front, batch))
    return np.concatenate(scores) if scores else np.zeros(0)


def evaluate(samples: list[Sample], clf: SspClassifier, cfg: PipelineConfig,
             front: Essp | None = None, degradation: Degradation | None = None,
             cache: ImageCache | None = None) -> tuple[Metrics, np.ndarray]:
    """Metrics (and the raw P(real) scores) over `samples`."""
    if not samples:
        raise EmptyInputError("nothing to evaluate")
    scores = score_samples(samples, clf, cfg, front, degradation, cache)
    metrics = compute_metrics(scores, [s.is_real for s in samples],
                              [s.generator for s in samples])
    return metrics, scores
