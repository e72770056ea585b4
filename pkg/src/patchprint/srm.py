"""Three-kernel SRM high-pass residual extraction."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import LUMA_WEIGHTS, Image

# fmt: off
_SQUARE3 = [[0,  0,  0,  0, 0],
            [0, -1,  2, -1, 0],
            [0,  2, -4,  2, 0],
            [0, -1,  2, -1, 0],
            [0,  0,  0,  0, 0]]
_SQUARE5 = [[-1,  2,  -2,  2, -1],
            [ 2, -6,   8, -6,  2],
            [-2,  8, -12,  8, -2],
            [ 2, -6,   8, -6,  2],
            [-1,  2,  -2,  2, -1]]
_HORIZ2 = [[0, 0,  0, 0, 0],
           [0, 0,  0, 0, 0],
           [0, 1, -2, 1, 0],
           [0, 0,  0, 0, 0],
           [0, 0,  0, 0, 0]]
# fmt: on

KERNEL_COEFFS = np.array([_SQUARE3, _SQUARE5, _HORIZ2], dtype=np.float64)
KERNEL_DIVISORS = np.array([4.0, 12.0, 2.0])
PAD = 2


class SrmKernelBank:
    """Immutable bank of the three 5x5 residual kernels and their divisors."""

    def __init__(self):
        coeffs = KERNEL_COEFFS.copy()
        divisors = KERNEL_DIVISORS.copy()
        coeffs.flags.writeable = False
        divisors.flags.writeable = False
        self.coeffs = coeffs
        self.divisors = divisors

    @property
    def normalized(self) -> np.ndarray:
        return self.coeffs / self.divisors[:, None, None]

    def __len__(self) -> int:
        return len(self.coeffs)


DEFAULT_BANK = SrmKernelBank()


def residuals(plane: np.ndarray, bank: SrmKernelBank = DEFAULT_BANK) -> np.ndarray:
    """Cross-correlate a 2-D plane with each kernel; returns H x W x 3.

    Borders are mirror padded (edge sample repeated) by 2 so constant planes
    give exactly zero everywhere. Since every kernel sums to zero, the window
    is centred on its middle sample first, which is algebraically identical
    and makes flat regions cancel without round-off.
    """
    padded = np.pad(plane, PAD, mode="symmetric")
    windows = sliding_window_view(padded, (5, 5))  # H x W x 5 x 5, no copy
    centred = windows - plane[:, :, None, None]
    out = np.einsum("hwij,kij->hwk", centred, bank.coeffs, optimize=True)
    return out / bank.divisors


def fingerprint_array(pixels: np.ndarray, bank: SrmKernelBank = DEFAULT_BANK) -> np.ndarray:
    """Fingerprint of an H x W x (k*C) stack, C in {1, 3}; returns H x W x 3k.

    Every 3-channel group is reduced to luma first; single channels are used
    as they are.
    """
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    c = pixels.shape[2]
    group = 3 if c % 3 == 0 else 1
    planes = []
    for g in range(0, c, group):
        chunk = pixels[:, :, g:g + group]
        plane = chunk @ LUMA_WEIGHTS if group == 3 else chunk[:, :, 0]
        planes.append(residuals(plane, bank))
    return np.concatenate(planes, axis=2)


def extract_fingerprint(img: Image, bank: SrmKernelBank = DEFAULT_BANK) -> np.ndarray:
    """NoiseFingerprint of an image: H x W x 3 signed residuals, no truncation."""
    return fingerprint_array(img.data, bank)


def residual_to_gray(plane: np.ndarray) -> np.ndarray:
    """Map a signed residual plane to [0, 1] as 0.5 + r / (2 max|r|)."""
    peak = float(np.max(np.abs(plane)))
    if peak == 0.0:
        return np.full(plane.shape, 0.5)
    return 0.5 + plane / (2.0 * peak)
