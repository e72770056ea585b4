"""Trainable networks and the SSP / ESSP forward pipelines."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, nn, ops
from .errors import ShapeMismatchError
from .imagecore import LUMA_WEIGHTS, Image, resize_array, resize_bilinear
from .patchselect import MOST_COMPLEX, SIMPLEST, Patch, crop_patches, select_patch, select_top_k
from .srm import DEFAULT_BANK, PAD, fingerprint_array

EMB_DIM = 64
# Fingerprints are computed on [0, 1] intensities; the classifier sees them in
# 8-bit units, the scale steganalysis residuals are normally quoted in.
FINGERPRINT_SCALE = 255.0


@dataclass(frozen=True)
class PipelineConfig:
    image_size: int = 256
    patch: int = 32
    crops: int = 64
    select: str = SIMPLEST
    topk: int = 1
    use_srm: bool = True
    luma_diversity: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.select not in (SIMPLEST, MOST_COMPLEX):
            raise ValueError(f"unknown selection mode {self.select!r}")
        if self.topk < 1:
            raise ValueError("topk must be >= 1")
        if self.topk > 1 and self.select != SIMPLEST:
            raise ValueError("top-k stacking only ranks the simplest patches")

    @property
    def classifier_channels(self) -> int:
        return 3 * self.topk

    def to_dict(self) -> dict:
        return asdict(self)


class SspClassifier(nn.Module):
    """Four conv-bn-relu-pool blocks, global average pool, linear, sigmoid.

    Returns P(real) per input.
    """

    def __init__(self, in_channels: int = 3, widths=(16, 32, 64, 64),
                 rng: np.random.Generator | None = None, input_scale: float = FINGERPRINT_SCALE):
        rng = rng or np.random.default_rng(0)
        self.in_channels = in_channels
        self.input_scale = float(input_scale)
        self.convs, self.norms = [], []
        c = in_channels
        for width in widths:
            self.convs.append(nn.Conv2d(c, width, 3, rng, pad=1))
            self.norms.append(nn.BatchNorm(width))
            c = width
        self.head = nn.Linear(c, 1, rng)

    def logits(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeMismatchError(f"classifier expects {self.in_channels} channels, got {x.shape[1]}")
        h = ops.mul(x, self.input_scale) if self.input_scale != 1.0 else x
        for conv, norm in zip(self.convs, self.norms):
            h = ops.max_pool2d(ops.relu(norm(conv(h))))
        return ops.reshape(self.head(ops.global_avg_pool(h)), (x.shape[0],))

    def forward(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.logits(x))


class PerceptionModule(nn.Module):
    """conv 3x3 -> batch norm -> relu -> global pool -> linear to 3 logits."""

    def __init__(self, in_channels: int = 3, width: int = 16,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(1)
        self.conv = nn.Conv2d(in_channels, width, 3, rng, pad=1)
        self.norm = nn.BatchNorm(width)
        self.fc = nn.Linear(width, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc(ops.global_avg_pool(ops.relu(self.norm(self.conv(x)))))


class TaskEmbeddings(nn.Module):
    def __init__(self, dim: int = EMB_DIM, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(2)
        self.h_blu = nn.parameter(rng.normal(size=dim), "h_blu")
        self.h_com = nn.parameter(rng.normal(size=dim), "h_com")
        self.h_rec = nn.parameter(rng.normal(size=dim), "h_rec")

    @property
    def dim(self) -> int:
        return self.h_blu.shape[0]

    def stacked(self) -> Tensor:
        rows = [ops.reshape(h, (1, self.dim)) for h in (self.h_blu, self.h_com, self.h_rec)]
        return ops.concat(rows, axis=0)


class _DoubleConv(nn.Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv1 = nn.Conv2d(c_in, c_out, 3, rng, pad=1)
        self.norm1 = nn.BatchNorm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, rng, pad=1)
        self.norm2 = nn.BatchNorm(c_out)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.relu(self.norm1(self.conv1(x)))
        return ops.relu(self.norm2(self.conv2(x)))


class EnhancementUnet(nn.Module):
    """Two-level U-Net conditioned through cross-attention on one embedding token.

    The head predicts a correction in logit space, so the restored patch is
    ``sigmoid(logit(x) + head(...))``: a sigmoid output that can express the
    identity map exactly.
    """

    LOGIT_EPS = 1e-3

    def __init__(self, channels: int = 3, widths=(32, 64), bottleneck: int = 128,
                 emb_dim: int = EMB_DIM, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(3)
        w1, w2 = widths
        self.enc1 = _DoubleConv(channels, w1, rng)
        self.att_enc1 = nn.CrossAttention(w1, emb_dim, rng)
        self.enc2 = _DoubleConv(w1, w2, rng)
        self.att_enc2 = nn.CrossAttention(w2, emb_dim, rng)
        self.mid = _DoubleConv(w2, bottleneck, rng)
        self.up2 = nn.ConvTranspose2d(bottleneck, w2, 2, rng)
        self.dec2 = _DoubleConv(2 * w2, w2, rng)
        self.att_dec2 = nn.CrossAttention(w2, emb_dim, rng)
        self.up1 = nn.ConvTranspose2d(w2, w1, 2, rng)
        self.dec1 = _DoubleConv(2 * w1, w1, rng)
        self.att_dec1 = nn.CrossAttention(w1, emb_dim, rng)
        self.head = nn.Conv2d(w1, channels, 1, rng)

    def forward(self, x: Tensor, h_fus: Tensor) -> Tensor:
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeMismatchError(f"patch side must be divisible by 4, got {x.shape[2:]}")
        ctx = ops.reshape(h_fus, (h_fus.shape[0], 1, h_fus.shape[-1]))
        e1 = self.att_enc1(self.enc1(x), ctx)
        e2 = self.att_enc2(self.enc2(ops.max_pool2d(e1)), ctx)
        m = self.mid(ops.max_pool2d(e2))
        d2 = self.att_dec2(self.dec2(ops.concat([self.up2(m), e2], axis=1)), ctx)
        d1 = self.att_dec1(self.dec1(ops.concat([self.up1(d2), e1], axis=1)), ctx)
        eps = self.LOGIT_EPS
        clipped = np.clip(x.data, eps, 1.0 - eps)
        base = Tensor(np.log(clipped / (1.0 - clipped)).astype(x.dtype))
        return ops.sigmoid(ops.add(base, self.head(d1)))


class Essp(nn.Module):
    """Perception + embeddings + enhancement, i.e. the restoration front end."""

    def __init__(self, seed: int = 0, use_perception: bool = True):
        rng = np.random.default_rng(seed)
        self.perception = PerceptionModule(rng=rng)
        self.embeddings = TaskEmbeddings(rng=rng)
        self.unet = EnhancementUnet(rng=rng)
        self.use_perception = use_perception

    def restore(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (restored patch batch, raw perception weights w')."""
        w = perceive_batch(x, self.perception)
        if self.use_perception:
            h = fuse_embeddings(normalize_weights(w), self.embeddings)
        else:
            h = ops.mul(ops.reshape(self.embeddings.h_rec, (1, -1)),
                        Tensor(np.ones((x.shape[0], 1), dtype=x.dtype)))
        return self.unet(x, h), w


# --- composition equations -------------------------------------------------

def patch_batch(patches) -> Tensor:
    """Stack H x W x C patches (arrays or Patch) into an N x C x H x W float32 tensor."""
    arrs = [p.pixels if isinstance(p, Patch) else p for p in patches]
    return Tensor(np.stack(arrs).transpose(0, 3, 1, 2).astype(np.float32))


def perceive_batch(x: Tensor, module: PerceptionModule) -> Tensor:
    return ops.sigmoid(module(x))


def perceive(patch: Patch | np.ndarray, module: PerceptionModule) -> np.ndarray:
    """Per-component sigmoid weights (blurry, compressed, intact) for one patch."""
    return perceive_batch(patch_batch([patch]), module).data[0]


def normalize_weights(w):
    """L1-normalize nonnegative weights along the last axis; uniform if the norm < 1e-8.

    Accepts a Tensor (differentiable) or an array.
    """
    if not isinstance(w, Tensor):
        w = np.asarray(w, dtype=np.float64)
        norm = np.abs(w).sum(axis=-1, keepdims=True)
        uniform = np.full_like(w, 1.0 / w.shape[-1])
        return np.where(norm < 1e-8, uniform, w / np.maximum(norm, 1e-300))
    norm = np.abs(w.data).sum(axis=-1, keepdims=True)
    if not np.any(norm < 1e-8):
        return ops.div(w, ops.sum(w, axis=-1, keepdims=True))
    # Degenerate rows become the constant uniform triple (no gradient); the
    # denominator gets +1 there only to stay finite.
    small = (norm < 1e-8).astype(w.dtype)
    ratio = ops.div(w, ops.add(ops.sum(w, axis=-1, keepdims=True), Tensor(small)))
    return ops.add(ops.mul(ratio, Tensor(1.0 - small)), Tensor(small / w.shape[-1]))


def fuse_embeddings(w_bar, emb: TaskEmbeddings):
    """h_fus = w1 h_blu + w2 h_com + w3 h_rec, batched over leading axes of w_bar."""
    if not isinstance(w_bar, Tensor):
        return np.asarray(w_bar, dtype=np.float64) @ emb.stacked().data.astype(np.float64)
    return ops.matmul(w_bar, emb.stacked())


def enhance(patch: Patch | np.ndarray, h_fus, net: EnhancementUnet) -> np.ndarray:
    x = patch_batch([patch])
    h = h_fus if isinstance(h_fus, Tensor) else Tensor(np.asarray(h_fus, dtype=np.float32))
    h = ops.reshape(h, (1, -1))
    return net(x, h).data[0].transpose(1, 2, 0).astype(np.float64)


# --- pipelines -------------------------------------------------------------

def extract_input_patch(img: Image, cfg: PipelineConfig, seed: int | None = None,
                        source_id=None) -> np.ndarray:
    """Resize, crop, and select: the M x M x (k*C) array that feeds the networks."""
    if (img.height, img.width) != (cfg.image_size, cfg.image_size):
        img = resize_bilinear(img, cfg.image_size, cfg.image_size)
    patches = crop_patches(img, cfg.patch, cfg.crops, cfg.seed if seed is None else seed,
                           source_id)
    if cfg.topk > 1:
        return select_top_k(patches, cfg.topk, cfg.luma_diversity)
    return select_patch(patches, cfg.select, cfg.luma_diversity).pixels


def classifier_input(pixels: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """Upsample a selected patch (stack) to image size and fingerprint it: C x H x W."""
    up = np.clip(resize_array(pixels, cfg.image_size, cfg.image_size), 0.0, 1.0)
    if cfg.use_srm:
        up = fingerprint_array(up)
    return up.transpose(2, 0, 1).astype(np.float32)


def classify_patches(patches: list[np.ndarray], clf: SspClassifier,
                     cfg: PipelineConfig) -> np.ndarray:
    x = Tensor(np.stack([classifier_input(p, cfg) for p in patches]))
    return clf(x).data.astype(np.float64)


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Row i holds the corner-aligned bilinear weights of output sample i.
    return resize_array(np.eye(n_in)[:, None, :], n_out, 1)[:, 0, :]


def _mirror_matrix(n: int, pad: int) -> np.ndarray:
    idx = np.pad(np.arange(n), pad, mode="symmetric")
    return np.eye(n)[idx]


def classifier_input_tensor(x: Tensor, cfg: PipelineConfig) -> Tensor:
    """Differentiable twin of :func:`classifier_input` for an N x C x M x M batch.

    Resizing and mirror padding are written as matrix products so gradients
    reach the patch; used when the classifier is trained through the
    enhancement output.
    """
    n, c, m, _ = x.shape
    dt = x.dtype
    r = Tensor(_resize_matrix(m, cfg.image_size).astype(dt))
    up = ops.clip(ops.matmul(ops.matmul(r, x), ops.transpose(r, (1, 0))), 0.0, 1.0)
    if not cfg.use_srm:
        return up
    size = cfg.image_size
    group = 3 if c % 3 == 0 else 1
    if group == 3:
        luma = np.zeros((c // 3, c, 1, 1), dtype=dt)
        for g in range(c // 3):
            luma[g, 3 * g:3 * g + 3, 0, 0] = LUMA_WEIGHTS
        planes = ops.conv2d(up, Tensor(luma))
    else:
        planes = up
    k = planes.shape[1]
    pm = Tensor(_mirror_matrix(size, PAD).astype(dt))
    padded = ops.matmul(ops.matmul(pm, planes), ops.transpose(pm, (1, 0)))
    padded = ops.reshape(padded, (n * k, 1, size + 2 * PAD, size + 2 * PAD))
    kernels = Tensor(DEFAULT_BANK.normalized[:, None].astype(dt))
    res = ops.conv2d(padded, kernels)  # (N k) x 3 x H x W
    return ops.reshape(res, (n, 3 * k, size, size))


def ssp_forward(img: Image, clf: SspClassifier, cfg: PipelineConfig = PipelineConfig()) -> float:
    """P(real) for one image through the single-simple-patch pipeline."""
    return float(classify_patches([extract_input_patch(img, cfg)], clf, cfg)[0])


def essp_restore(pixels: np.ndarray, front: Essp) -> np.ndarray:
    """Restore an M x M x (k*C) selection; stacked patches are restored one by one.

    Grayscale patches go through the colour networks replicated to three
    channels and are averaged back.
    """
    c = pixels.shape[2]
    group = 3 if c % 3 == 0 else 1
    chunks = [pixels[:, :, g:g + group] for g in range(0, c, group)]
    if group == 1:
        chunks = [np.repeat(ch, 3, axis=2) for ch in chunks]
    restored, _ = front.restore(patch_batch(chunks))
    out = restored.data.transpose(0, 2, 3, 1).astype(np.float64)
    if group == 1:
        out = out.mean(axis=3, keepdims=True)
    return np.concatenate(list(out), axis=2)


def essp_forward(img: Image, front: Essp, clf: SspClassifier,
                 cfg: PipelineConfig = PipelineConfig()) -> float:
    """P(real) with the patch restored by perception-guided enhancement first."""
    pixels = extract_input_patch(img, cfg)
    return float(classify_patches([essp_restore(pixels, front)], clf, cfg)[0])


def parameter_count(module: nn.Module) -> int:
    return sum(math.prod(p.shape) for _, p in module.named_parameters())
