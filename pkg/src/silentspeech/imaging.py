"""Region-of-interest cropping, bicubic resizing and image fidelity metrics.

All images are 2-D float arrays with values in [0, 1], indexed [row, col].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Roi:
    """Fixed rectangular region of interest, in pixels from the top-left corner."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"roi must have positive size, got {self.width}x{self.height}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"roi origin must be non-negative, got ({self.x0},{self.y0})")


def crop(frame: np.ndarray, roi: Roi) -> np.ndarray:
    """Cut the ROI out of a frame. The ROI must lie fully inside the frame."""
    h, w = frame.shape
    if roi.x0 + roi.width > w or roi.y0 + roi.height > h:
        raise ValueError(
            f"roi ({roi.x0},{roi.y0},{roi.width},{roi.height}) out of bounds for {w}x{h} frame"
        )
    return frame[roi.y0 : roi.y0 + roi.height, roi.x0 : roi.x0 + roi.width].copy()


# Catmull-Rom coefficient of the cubic convolution kernel.
CUBIC_A = -0.5


def cubic_kernel(t):
    """Cubic convolution weight for a sample at distance ``t`` (a = -0.5)."""
    t = np.abs(t)
    out = np.zeros_like(t, dtype=float)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    a = CUBIC_A
    out = np.where(near, (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0, out)
    out = np.where(far, a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a, out)
    return out


def _axis_taps(src_len: int, dst_len: int):
    """Sample indices (4, dst) and weights (4, dst) for one resize axis.

    Output pixel centres map back to source coordinates with the usual
    half-pixel convention: s = (d + 0.5) * src/dst - 0.5. Samples outside the
    image are clamped to the edge.
    """
    scale = src_len / dst_len
    d = np.arange(dst_len, dtype=float)
    s = (d + 0.5) * scale - 0.5
    base = np.floor(s).astype(int)
    frac = s - base
    idx = np.stack([base - 1, base, base + 1, base + 2])
    weights = cubic_kernel(s[None, :] - idx)
    idx = np.clip(idx, 0, src_len - 1)
    return idx, weights


def resize_bicubic(frame: np.ndarray, width: int, height: int) -> np.ndarray:
    """Resize a frame with Catmull-Rom bicubic interpolation, edge clamped.

    The result is clipped back to [0, 1]; cubic interpolation can overshoot
    at sharp edges. Resizing to the source size reproduces the input.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"target size must be positive, got {width}x{height}")
    frame = np.asarray(frame, dtype=float)
    src_h, src_w = frame.shape

    ix, wx = _axis_taps(src_w, width)
    iy, wy = _axis_taps(src_h, height)

    # Horizontal pass then vertical pass; the kernel is separable.
    horiz = np.einsum("kd,hkd->hd", wx, frame[:, ix])
    out = np.einsum("kd,kdw->dw", wy, horiz[iy, :])
    return np.clip(out, 0.0, 1.0)


def reconstruction_fidelity(a: np.ndarray, b: np.ndarray) -> dict:
    """Mean squared error and PSNR (dB, peak 1.0) between two same-size frames."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return {"mse": mse, "psnr": psnr}
