"""Training loops: the classifier with BCE, then the restoration front end with MSE."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..autodiff import Adam, Tape, Tensor, backward, ops
from ..degrade import DegradationConfig, augment
from ..errors import EmptyInputError, SingleClassDatasetError
from ..imagecore import Image, load_image, resize_bilinear
from ..models import (Essp, PipelineConfig, SspClassifier, classifier_input,
                      classifier_input_tensor, extract_input_patch, patch_batch)
from ..rng import SplitMix64
from .checkpoint import Checkpoint
from .data import Sample

# Stream tags for SplitMix64.derive so that ordering, cropping and
# augmentation never share random numbers.
_ORDER, _CROP, _AUG = 0, 1, 2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch: int = 64
    lr: float = 1e-4
    aug_prob: float = 0.10
    sigma_range: tuple[float, float] = (0.0, 1.0)
    qf_range: tuple[int, int] = (90, 100)
    seed: int = 0
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1 or self.lr <= 0:
            raise ValueError("epochs must be >= 0, batch >= 1 and lr > 0")

    def degradation(self) -> DegradationConfig:
        return DegradationConfig(self.aug_prob, tuple(self.sigma_range), tuple(self.qf_range),
                                 self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_range"] = list(self.sigma_range)
        d["qf_range"] = list(self.qf_range)
        return d


@dataclass
class TrainResult:
    model: object
    history: list[dict]
    classifier: SspClassifier | None = None


class ImageCache:
    """Decoded images at pipeline size, loaded once.

    Images already at the target size are kept as u8 (exact), others as the
    resized float array.
    """

    def __init__(self, size: int):
        self.size = size
        self._store: dict[str, np.ndarray] = {}

    def get(self, path: str) -> Image:
        arr = self._store.get(path)
        if arr is None:
            img = load_image(path)
            if (img.height, img.width) == (self.size, self.size):
                arr = img.to_u8()
            else:
                arr = resize_bilinear(img, self.size, self.size).data
            self._store[path] = arr
        if arr.dtype == np.uint8:
            return Image.from_u8(arr)
        return Image(arr)


def epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    """Sample order of one epoch, a pure function of (seed, epoch)."""
    return SplitMix64.derive(seed, _ORDER, epoch).permutation(n)


def crop_seed(seed: int, epoch: int, index: int) -> int:
    return SplitMix64.derive(seed, _CROP, epoch, index).next_u64()


def aug_stream(seed: int, epoch: int, index: int) -> SplitMix64:
    return SplitMix64.derive(seed, _AUG, epoch, index)


def _check_classes(samples: list[Sample]) -> None:
    if not samples:
        raise EmptyInputError("training set is empty")
    if len({s.label for s in samples}) < 2:
        raise SingleClassDatasetError(f"training set has only {samples[0].label!r} samples")


def _batches(order: list[int], size: int):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def _log(log_fh, record: dict, callback: Callable[[dict], None] | None) -> None:
    if log_fh is not None:
        log_fh.write(json.dumps(record, sort_keys=True) + "\n")
        log_fh.flush()
    if callback is not None:
        callback(record)


def _open_log(log_path):
    return open(log_path, "w", encoding="utf-8") if log_path else None


def train_ssp(samples: list[Sample], cfg: TrainConfig = TrainConfig(),
              log_path: str | os.PathLike | None = None, cache: ImageCache | None = None,
              callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Minimize BCE between P(real) and the label over freshly cropped patches.

    Every epoch re-crops each image with a seed derived from (seed, epoch,
    index) and degrades the selected patch with probability aug_prob each for
    blur and compression. One JSON line per epoch goes to `log_path`.
    """
    _check_classes(samples)
    pcfg = cfg.pipeline
    cache = cache or ImageCache(pcfg.image_size)
    deg = cfg.degradation()
    clf = SspClassifier(pcfg.classifier_channels, rng=np.random.default_rng(cfg.seed))
    clf.train()
    opt = Adam(clf.parameters(), lr=cfg.lr)
    labels = np.array([s.is_real for s in samples], dtype=np.float32)
    history = []
    log_fh = _open_log(log_path)
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            losses, weights = [], []
            for idx in _batches(epoch_order(len(samples), cfg.seed, epoch), cfg.batch):
                xs = []
                for i in idx:
                    pixels = extract_input_patch(cache.get(samples[i].path), pcfg,
                                                 seed=crop_seed(cfg.seed, epoch, i))
                    if deg.probability > 0:
                        pixels, _ = augment(pixels, deg, aug_stream(cfg.seed, epoch, i))
                    xs.append(classifier_input(pixels, pcfg))
                x = Tensor(np.stack(xs))
                with Tape() as tape:
                    loss = ops.bce_loss(clf(x), labels[idx])
                backward(loss, tape)
                del tape
                opt.step()
                losses.append(loss.item())
                weights.append(len(idx))
            record = {"epoch": epoch + 1, "loss": float(np.average(losses, weights=weights)),
                      "wall_time": time.perf_counter() - t0}
            history.append(record)
            _log(log_fh, record, callback)
    finally:
        if log_fh is not None:
            log_fh.close()
    clf.eval()
    return TrainResult(clf, history, clf)


def ssp_checkpoint(clf: SspClassifier, cfg: TrainConfig) -> Checkpoint:
    entries = {f"ssp.{k}": v for k, v in clf.state_dict().items()}
    config = {"kind": "ssp", "pipeline": cfg.pipeline.to_dict(), "train": cfg.to_dict()}
    return Checkpoint(entries, cfg.seed, cfg.epochs, config)


def essp_checkpoint(front: Essp, clf: SspClassifier, cfg: TrainConfig,
                    unfreeze_ssp: bool = False) -> Checkpoint:
    entries = {f"ssp.{k}": v for k, v in clf.state_dict().items()}
    entries.update(front.state_dict())
    config = {"kind": "essp", "pipeline": cfg.pipeline.to_dict(), "train": cfg.to_dict(),
              "use_perception": front.use_perception, "unfreeze_ssp": unfreeze_ssp}
    return Checkpoint(entries, cfg.seed, cfg.epochs, config)


def classifier_from_checkpoint(ckpt: Checkpoint) -> tuple[SspClassifier, PipelineConfig]:
    pcfg = PipelineConfig(**ckpt.config["pipeline"])
    clf = SspClassifier(pcfg.classifier_channels)
    clf.load_state_dict(ckpt.subset("ssp"))
    clf.eval()
    return clf, pcfg


def front_from_checkpoint(ckpt: Checkpoint) -> Essp:
    if ckpt.config.get("kind") != "essp":
        raise ValueError("checkpoint holds no enhancement front end")
    front = Essp(use_perception=ckpt.config.get("use_perception", True))
    front.load_state_dict({k: v for k, v in ckpt.entries.items() if not k.startswith("ssp.")})
    front.eval()
    return front


def _essp_patches(samples, idx, cache, pcfg, seed, epoch, deg):
    """(degraded, clean, one-hot label, is_real) per 3-channel patch of the batch."""
    degraded, clean, onehot, real = [], [], [], []
    for i in idx:
        pixels = extract_input_patch(cache.get(samples[i].path), pcfg,
                                     seed=crop_seed(seed, epoch, i))
        stream = aug_stream(seed, epoch, i)
        c = pixels.shape[2]
        group = 3 if c % 3 == 0 else 1
        for g in range(0, c, group):
            chunk = pixels[:, :, g:g + group]
            if group == 1:
                chunk = np.repeat(chunk, 3, axis=2)
            out, label = augment(chunk, deg, stream)
            degraded.append(out)
            clean.append(chunk)
            onehot.append(label.as_array())
            real.append(samples[i].is_real)
    return degraded, clean, np.array(onehot, dtype=np.float32), np.array(real, dtype=np.float32)


def train_essp(samples: list[Sample], clf: SspClassifier, cfg: TrainConfig = TrainConfig(),
               use_perception: bool = True, unfreeze_ssp: bool = False,
               log_path: str | os.PathLike | None = None, cache: ImageCache | None = None,
               callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Jointly fit perception, embeddings and U-Net with
    mse(x', x_clean) + mse(w', w_hat).

    The classifier stays frozen unless `unfreeze_ssp`, in which case a BCE term
    on the restored patches is added and the classifier is updated too. The
    log holds an epoch-0 record measured before any update, then one record
    per epoch with both loss terms.
    """
    _check_classes(samples)
    pcfg = cfg.pipeline
    cache = cache or ImageCache(pcfg.image_size)
    deg = cfg.degradation()
    front = Essp(seed=cfg.seed, use_perception=use_perception)
    front.train()
    params = front.parameters()
    if not use_perception:
        # Only the reconstruction embedding conditions the U-Net.
        unused = {id(front.embeddings.h_blu), id(front.embeddings.h_com)}
        params = [p for p in params if id(p) not in unused]
    if unfreeze_ssp:
        clf.train()
        params = params + clf.parameters()
    else:
        clf.eval()
    opt = Adam(params, lr=cfg.lr)
    history = []
    log_fh = _open_log(log_path)

    def run_epoch(epoch: int, update: bool) -> dict:
        t0 = time.perf_counter()
        sums = {"rec": 0.0, "perc": 0.0, "bce": 0.0}
        count = 0
        # Epoch 0 measures the untrained net on the first epoch's data.
        order = epoch_order(len(samples), cfg.seed, max(epoch, 1))
        for idx in _batches(order, cfg.batch):
            degraded, clean, onehot, real = _essp_patches(samples, idx, cache, pcfg, cfg.seed,
                                                          max(epoch, 1), deg)
            x, target = patch_batch(degraded), patch_batch(clean)
            with Tape() as tape:
                restored, w = front.restore(x)
                rec = ops.mse_loss(restored, target)
                perc = ops.mse_loss(w, Tensor(onehot))
                loss = ops.add(rec, perc)
                if unfreeze_ssp:
                    prob = clf(classifier_input_tensor(restored, pcfg))
                    bce = ops.bce_loss(prob, real)
                    loss = ops.add(loss, bce)
                    sums["bce"] += bce.item() * len(idx)
            if update:
                backward(loss, tape)
                del tape
                opt.step()
            else:
                del tape
            sums["rec"] += rec.item() * len(idx)
            sums["perc"] += perc.item() * len(idx)
            count += len(idx)
        record = {"epoch": epoch, "rec_loss": sums["rec"] / count,
                  "perc_loss": sums["perc"] / count, "wall_time": time.perf_counter() - t0}
        if unfreeze_ssp:
            record["bce_loss"] = sums["bce"] / count
        return record

    try:
        # Epoch 0 runs in training mode like the others, but must leave the
        # batch-norm statistics where they were.
        saved = [(buf, buf.copy()) for m in (front, clf) for _, buf in m.named_buffers()]
        record = run_epoch(0, update=False)
        for buf, copy in saved:
            buf[...] = copy
        history.append(record)
        _log(log_fh, record, callback)
        for epoch in range(1, cfg.epochs + 1):
            record = run_epoch(epoch, update=True)
            history.append(record)
            _log(log_fh, record, callback)
    finally:
        if log_fh is not None:
            log_fh.close()
    front.eval()
    clf.eval()
    return TrainResult(front, history, clf)
