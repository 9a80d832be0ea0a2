"""Left-ventricle localisation and ROI cropping.

The LV is found from the first temporal harmonic of each pixel (the heart
beats once per sequence), a gradient-voting circular Hough transform on that
activity image, and a score-weighted Gaussian vote over the best circles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .types import CineSequence


@dataclass(frozen=True)
class ScoredCircle:
    center: tuple[float, float]
    radius: float
    score: float


def temporal_activity_image(seq: CineSequence | np.ndarray) -> np.ndarray:
    """Magnitude of the first temporal DFT bin (unnormalised) per pixel."""
    frames = seq.frames if isinstance(seq, CineSequence) else np.asarray(seq)
    if frames.shape[0] < 2:
        raise ValueError("need at least two frames")
    spectrum = np.fft.fft(frames.astype(np.float64), axis=0)
    return np.abs(spectrum[1])


def hough_circles(activity: np.ndarray, r_min: int = 8, r_max: int = 30, top_k: int = 10,
                  edge_factor: float = 2.0, smooth_sigma: float = 1.0) -> list[ScoredCircle]:
    """Gradient-directed circular Hough transform.

    Pixels whose Sobel gradient magnitude exceeds ``edge_factor`` times the
    mean magnitude vote for centres one radius away along +-gradient, each
    vote weighted by its magnitude in units of the mean.  Accumulators are
    divided by the circumference ``2 pi r`` so that large radii are not
    favoured merely for having more edge pixels, and lightly smoothed
    (sigma 1 px) so rounding of vote positions does not split peaks.  The
    strongest peak of each radius is kept and the ``top_k`` best circles over
    all radii are returned, highest score first.
    """
    if not 0 < r_min < r_max:
        raise ValueError(f"need 0 < r_min < r_max, got {r_min}, {r_max}")
    img = np.asarray(activity, dtype=np.float64)
    if smooth_sigma > 0:
        img = ndimage.gaussian_filter(img, smooth_sigma, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    mag = np.hypot(gy, gx)
    mean = mag.mean()
    if mean <= 0:
        return []
    ey, ex = np.nonzero(mag > edge_factor * mean)
    if ey.size == 0:
        return []
    uy = gy[ey, ex] / mag[ey, ex]
    ux = gx[ey, ex] / mag[ey, ex]
    weight = mag[ey, ex] / mean
    H, W = img.shape

    best: list[ScoredCircle] = []
    for r in range(int(r_min), int(r_max) + 1):
        acc = np.zeros(H * W)
        for sign in (1.0, -1.0):
            cy = np.rint(ey + sign * r * uy).astype(np.int64)
            cx = np.rint(ex + sign * r * ux).astype(np.int64)
            ok = (cy >= 0) & (cy < H) & (cx >= 0) & (cx < W)
            np.add.at(acc, cy[ok] * W + cx[ok], weight[ok])
        acc = ndimage.gaussian_filter(acc.reshape(H, W), 1.0, mode="constant").ravel()
        peak = int(np.argmax(acc))
        if acc[peak] > 0:
            best.append(ScoredCircle(center=(float(peak // W), float(peak % W)),
                                     radius=float(r), score=float(acc[peak] / (2.0 * np.pi * r))))
    best.sort(key=lambda c: (-c.score, c.radius))
    return best[:top_k]


def likelihood_surface(circles: Iterable[ScoredCircle | tuple[object, ScoredCircle]],
                       shape: tuple[int, int], sigma_px: float = 5.0) -> np.ndarray:
    rows = np.arange(shape[0], dtype=np.float64)[:, None]
    cols = np.arange(shape[1], dtype=np.float64)[None, :]
    surf = np.zeros(shape)
    for c in circles:
        if isinstance(c, tuple):
            c = c[1]
        cy, cx = c.center
        surf += c.score * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * sigma_px ** 2))
    return surf


def vote_center(circles: Sequence[ScoredCircle | tuple[object, ScoredCircle]],
                sigma_px: float = 5.0, shape: tuple[int, int] | None = None) -> tuple[int, int]:
    """Arg-max of the score-weighted sum of Gaussian kernels at circle centres.

    Circles may be bare or ``(slice_id, circle)`` pairs.  Ties resolve to the
    smallest row-major index.
    """
    circles = list(circles)
    if not circles:
        raise ValueError("cannot vote without circles")
    if shape is None:
        cs = [c[1] if isinstance(c, tuple) else c for c in circles]
        shape = (int(max(c.center[0] for c in cs)) + 1 + int(4 * sigma_px),
                 int(max(c.center[1] for c in cs)) + 1 + int(4 * sigma_px))
    surf = likelihood_surface(circles, shape, sigma_px)
    idx = int(np.argmax(surf))
    return idx // shape[1], idx % shape[1]


def crop_window(center: tuple[float, float], size: int, shape: tuple[int, int]) -> tuple[int, int]:
    """Top-left corner of a ``size`` square centred on *center*, clamped inside."""
    if size % 2:
        raise ValueError("crop size must be even")
    H, W = shape
    if size > min(H, W):
        raise ValueError(f"crop size {size} exceeds image extent {shape}")
    r0 = int(round(center[0])) - size // 2
    c0 = int(round(center[1])) - size // 2
    return min(max(r0, 0), H - size), min(max(c0, 0), W - size)


def crop_roi(seq: CineSequence, center: tuple[float, float], size: int = 80) -> CineSequence:
    r0, c0 = crop_window(center, size, seq.shape[1:])
    return seq.with_frames(seq.frames[:, r0:r0 + size, c0:c0 + size])


@dataclass(frozen=True)
class RoiResult:
    center: tuple[int, int]
    circles: tuple[ScoredCircle, ...]
    crop: CineSequence


def extract_roi(slices: CineSequence | Sequence[CineSequence], size: int = 80, r_min: int = 8,
                r_max: int = 30, top_k: int = 10, sigma_px: float = 5.0) -> RoiResult:
    """Full localisation pipeline; the crop is taken from the first slice."""
    if isinstance(slices, CineSequence):
        slices = [slices]
    shape = slices[0].shape[1:]
    votes: list[tuple[int, ScoredCircle]] = []
    for k, s in enumerate(slices):
        votes.extend((k, c) for c in hough_circles(temporal_activity_image(s), r_min, r_max, top_k))
    if votes:
        center = vote_center(votes, sigma_px, shape)
    else:
        center = (shape[0] // 2, shape[1] // 2)
    return RoiResult(center=center, circles=tuple(c for _, c in votes),
                     crop=crop_roi(slices[0], center, size))
