"""Sample manifests and the synthetic camera-noise corpus."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from ..degrade import blur_array
from ..errors import ParseError, UnknownLabelError
from ..imagecore import Image, save_image
from ..rng import SplitMix64

REAL, FAKE = "real", "fake"
LABELS = (REAL, FAKE)
SPLITS = ("train", "test")
MANIFEST_NAME = "manifest.jsonl"
SYNTH_GENERATOR = "synthetic"


@dataclass(frozen=True)
class Sample:
    path: str
    label: str
    generator: str
    split: str

    def __post_init__(self):
        if not self.path:
            raise ValueError("sample path must be nonempty")
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def is_real(self) -> bool:
        return self.label == REAL


def load_manifest(path: str | os.PathLike) -> list[Sample]:
    """Parse a JSON-lines manifest; blank lines are skipped, order is kept."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            missing = [k for k in ("path", "label", "generator", "split") if k not in obj]
            if missing:
                raise ParseError(f"missing keys {missing}", lineno)
            if obj["label"] not in LABELS:
                raise UnknownLabelError(f"unknown label {obj['label']!r}", lineno)
            if obj["split"] not in SPLITS:
                raise ParseError(f"unknown split {obj['split']!r}", lineno)
            if not isinstance(obj["path"], str) or not obj["path"]:
                raise ParseError("path must be a nonempty string", lineno)
            samples.append(Sample(obj["path"], obj["label"], str(obj["generator"]), obj["split"]))
    return samples


def write_manifest(samples: list[Sample], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(asdict(s), sort_keys=True) + "\n")


def resolve_paths(samples: list[Sample], base: str | os.PathLike) -> list[Sample]:
    """Make relative sample paths relative to `base` (usually the manifest's folder)."""
    base = Path(base)
    return [s if os.path.isabs(s.path) else replace(s, path=str(base / s.path)) for s in samples]


def split(samples: list[Sample], which: str) -> list[Sample]:
    return [s for s in samples if s.split == which]


# --- synthetic corpus ------------------------------------------------------

def _scene(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth colour gradient with a low-frequency ripple and one textured block."""
    y, x = np.mgrid[0:size, 0:size] / (size - 1.0)
    img = np.empty((size, size, 3))
    for c in range(3):
        a = rng.uniform(0.25, 0.75)
        gx, gy = rng.uniform(-0.2, 0.2, 2)
        fx, fy = rng.uniform(0.5, 2.0, 2)
        phase = rng.uniform(0, 2 * np.pi)
        img[:, :, c] = a + gx * (x - 0.5) + gy * (y - 0.5) \
            + 0.05 * np.cos(2 * np.pi * (fx * x + fy * y) + phase)
    # A high-contrast stripe block so that patch choice matters.
    bh, bw = rng.integers(size // 4, size // 2, 2)
    r0, c0 = rng.integers(0, size - bh), rng.integers(0, size - bw)
    period = rng.uniform(3.0, 8.0)
    stripes = 0.15 * np.sign(np.sin(2 * np.pi * (x[:bh, :bw] + y[:bh, :bw]) * size / period))
    img[r0:r0 + bh, c0:c0 + bw] += stripes[:, :, None]
    return img


def synth_image(label: str, seed: int, size: int = 256, noise_sigma: float = 2.0 / 255,
                smooth_sigma: float = 2.0) -> np.ndarray:
    """One synthetic u8 image.

    Real images carry i.i.d. Gaussian sensor noise and a mild gain; fake ones
    carry the same amount of noise but Gaussian-smoothed, so almost nothing of
    it survives a high-pass filter.
    """
    rng = np.random.default_rng(seed)
    img = _scene(rng, size)
    noise = rng.normal(0.0, noise_sigma, img.shape)
    if label == REAL:
        img = img * rng.uniform(0.9, 1.1) + noise
    else:
        img = img + blur_array(noise, smooth_sigma)
    return np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)


def make_synthetic_corpus(out_dir: str | os.PathLike, n_per_class: int = 200, seed: int = 0,
                          size: int = 256, noise_sigma: float = 2.0 / 255,
                          smooth_sigma: float = 2.0, train_fraction: float = 0.8
                          ) -> tuple[Path, list[Sample]]:
    """Write PNGs plus a manifest; the first 80% of each class is the train split.

    Returns (manifest path, samples with paths relative to `out_dir`).
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out = Path(out_dir)
    (out / REAL).mkdir(parents=True, exist_ok=True)
    (out / FAKE).mkdir(parents=True, exist_ok=True)
    n_train = int(round(train_fraction * n_per_class))
    samples = []
    for k, label in enumerate(LABELS):
        for i in range(n_per_class):
            img_seed = SplitMix64.derive(seed, k, i).next_u64()
            arr = synth_image(label, img_seed, size, noise_sigma, smooth_sigma)
            rel = f"{label}/{i:05d}.png"
            save_image(Image.from_u8(arr), out / rel)
            samples.append(Sample(rel, label, SYNTH_GENERATOR, "train" if i < n_train else "test"))
    manifest = out / MANIFEST_NAME
    write_manifest(samples, manifest)
    return manifest, samples
