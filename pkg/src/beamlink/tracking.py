"""Tag detection: Otsu thresholding, blob extraction, target selection.

The threshold search runs in exact integer/rational arithmetic so the argmax
(and its tie-break toward the lower threshold) is a property of the histogram,
not of floating-point summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import accumulate

import numpy as np
from scipy import ndimage

from .config import TrackerConfig
from .errors import DegenerateHistogramError, NoBlobsError
from .optics import SyntheticImage, write_pgm

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def histogram256(image: SyntheticImage) -> np.ndarray:
    return np.bincount(image.pixels.ravel(), minlength=256)


def otsu_threshold(hist) -> int:
    """Threshold t maximizing inter-class variance of {bins < t} vs {bins >= t}.

    Ties break toward the lower threshold.  Inter-class variance is compared
    exactly: sigma_b^2(t) = (s0*n1 - s1*n0)^2 / (N^2 * n0 * n1) and only the
    t-dependent part is ranked, using exact rationals.

    Raises:
        DegenerateHistogramError: fewer than 2 nonempty bins.
    """
    counts = list(hist)
    if len(counts) != 256:
        raise DegenerateHistogramError("histogram must have 256 bins")
    if sum(1 for c in counts if c > 0) < 2:
        raise DegenerateHistogramError("all mass in a single bin")
    exact = [c if isinstance(c, int) or (hasattr(c, "is_integer") and float(c).is_integer())
             else None for c in counts]
    if any(e is None for e in exact):
        counts = [Fraction(float(c)) for c in counts]
    else:
        counts = [int(c) for c in counts]
    total = sum(counts)
    total_s = sum(i * c for i, c in enumerate(counts))
    cum_n = list(accumulate(counts))
    cum_s = list(accumulate(i * c for i, c in enumerate(counts)))
    best_t = 1
    best = None  # (numerator, denominator) of the t-dependent ratio
    for t in range(1, 256):
        n0 = cum_n[t - 1]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        s0 = cum_s[t - 1]
        s1 = total_s - s0
        num = (s0 * n1 - s1 * n0) ** 2
        den = n0 * n1
        if best is None or num * best[1] > best[0] * den:
            best = (num, den)
            best_t = t
    if best is None:
        raise DegenerateHistogramError("no separating threshold exists")
    return best_t


@dataclass
class Blob:
    centroid: tuple[float, float]  # (x, y), intensity-weighted, sub-pixel
    area: int
    peak: int
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1), inclusive


def detect_blobs(image: SyntheticImage, threshold: int,
                 cfg: TrackerConfig | None = None) -> list[Blob]:
    """8-connected components of ``pixels >= threshold``.

    Components smaller than ``min_area_px`` are dropped; the rest come back
    sorted by area descending with centroids weighted by the original
    intensities.
    """
    cfg = cfg or TrackerConfig()
    px = image.pixels
    mask = px >= threshold
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    areas = ndimage.sum_labels(mask, labels, idx)
    keep = np.nonzero(areas >= cfg.min_area_px)[0]
    order = keep[np.argsort(-areas[keep], kind="stable")][: cfg.max_blobs]
    slices = ndimage.find_objects(labels)
    blobs: list[Blob] = []
    for k in order:
        label = int(idx[k])
        sl = slices[label - 1]
        sub = px[sl].astype(np.float64)
        submask = labels[sl] == label
        w = sub * submask
        wsum = float(w.sum())
        ys, xs = np.mgrid[sl[0], sl[1]]
        if wsum <= 0:
            # all-zero component (possible with threshold 0): uniform weights
            w = submask.astype(float)
            wsum = float(w.sum())
        cx = float((w * xs).sum() / wsum)
        cy = float((w * ys).sum() / wsum)
        blobs.append(Blob(
            centroid=(cx, cy),
            area=int(areas[k]),
            peak=int(px[sl][submask].max()),
            bbox=(int(sl[1].start), int(sl[0].start),
                  int(sl[1].stop - 1), int(sl[0].stop - 1)),
        ))
    return blobs


def select_target(blobs: list[Blob],
                  predicted: tuple[float, float] | None = None) -> Blob:
    """Nearest blob to the prediction, or the largest one without it."""
    if not blobs:
        raise NoBlobsError("no candidate blobs")
    if predicted is None:
        return max(blobs, key=lambda b: b.area)
    return min(blobs, key=lambda b: math.dist(b.centroid, predicted))


def write_mask_pgm(path, image: SyntheticImage, threshold: int) -> None:
    mask = (image.pixels >= threshold).astype(np.uint8) * 255
    write_pgm(path, SyntheticImage(mask))
