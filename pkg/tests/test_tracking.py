"""Thresholding and blob extraction.

The threshold is validated against a brute-force reference that evaluates the
full inter-class variance for every candidate cut in exact rational
arithmetic, with the same tie-break (lowest winning threshold).
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from beamlink.config import TrackerConfig
from beamlink.errors import DegenerateHistogramError, NoBlobsError
from beamlink.optics import SyntheticImage
from beamlink.tracking import (
    Blob,
    detect_blobs,
    histogram256,
    otsu_threshold,
    select_target,
    write_mask_pgm,
)


def brute_force_otsu(hist) -> int:
    """Exhaustive inter-class variance maximization, exact arithmetic.

    sigma_b^2(t) = w0 * w1 * (mu0 - mu1)^2 over the split {< t} / {>= t},
    computed with Fractions so equality of scores is exact.
    """
    counts = [int(c) for c in hist]
    total = sum(counts)
    best_t, best_score = None, None
    for t in range(1, 256):
        n0 = sum(counts[:t])
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        mu0 = Fraction(sum(i * c for i, c in enumerate(counts[:t])), n0)
        mu1 = Fraction(sum(i * c for i, c in enumerate(counts[t:], start=t)), n1)
        score = Fraction(n0, total) * Fraction(n1, total) * (mu0 - mu1) ** 2
        if best_score is None or score > best_score:
            best_score, best_t = score, t
    return best_t


def image_of(array) -> SyntheticImage:
    return SyntheticImage(np.asarray(array, dtype=np.uint8))


# --- otsu threshold -------------------------------------------------------


def test_otsu_matches_brute_force_on_random_histograms():
    rng = np.random.default_rng(41)
    for _ in range(200):
        hist = np.zeros(256, dtype=int)
        # sparse spiky histograms exercise ties and empty bins
        bins = rng.integers(0, 256, size=rng.integers(2, 12))
        hist[bins] += rng.integers(1, 1000, size=len(bins))
        if np.count_nonzero(hist) < 2:
            continue
        assert otsu_threshold(hist) == brute_force_otsu(hist)


def test_otsu_matches_brute_force_on_dense_histograms():
    rng = np.random.default_rng(42)
    for _ in range(50):
        hist = rng.integers(0, 50, size=256)
        hist[rng.integers(0, 128)] += 5000
        hist[rng.integers(128, 256)] += 5000
        assert otsu_threshold(hist) == brute_force_otsu(hist)


def test_otsu_two_spike_histogram():
    hist = np.zeros(256, dtype=int)
    hist[10] = 200
    hist[200] = 11
    assert otsu_threshold(hist) == brute_force_otsu(hist) == 11


def test_otsu_tie_breaks_low():
    # every cut between the two spikes separates them identically; the
    # winning threshold must be the lowest one
    hist = np.zeros(256, dtype=int)
    hist[10] = 5
    hist[20] = 5
    assert otsu_threshold(hist) == 11


def test_otsu_scale_invariance():
    rng = np.random.default_rng(43)
    hist = rng.integers(0, 100, size=256)
    assert otsu_threshold(hist) == otsu_threshold(hist * 7)


def test_otsu_rejects_degenerate_histograms():
    flat = np.zeros(256, dtype=int)
    with pytest.raises(DegenerateHistogramError):
        otsu_threshold(flat)
    single = np.zeros(256, dtype=int)
    single[77] = 1000
    with pytest.raises(DegenerateHistogramError):
        otsu_threshold(single)
    with pytest.raises(DegenerateHistogramError):
        otsu_threshold(np.zeros(100, dtype=int))


def test_otsu_separates_bimodal_noise():
    # gaussian background vs bright mode: the cut must land between them
    rng = np.random.default_rng(44)
    px = np.clip(rng.normal(40, 8, size=(100, 100)), 0, 255).astype(np.uint8)
    px[40:60, 40:60] = np.clip(rng.normal(180, 8, size=(20, 20)), 0,
                               255).astype(np.uint8)
    t = otsu_threshold(histogram256(image_of(px)))
    # cut must clear both modes by 3 sigma (Otsu biases toward the heavier
    # class, so it sits well below the midpoint here)
    assert 40 + 24 < t < 180 - 24


def test_histogram_counts_every_pixel():
    px = np.arange(64, dtype=np.uint8).reshape(8, 8)
    hist = histogram256(image_of(px))
    assert hist.shape == (256,)
    assert hist.sum() == 64
    assert all(hist[:64] == 1)


# --- blob detection -------------------------------------------------------


def test_detect_blobs_square_centroid():
    px = np.zeros((200, 200), dtype=np.uint8)
    px[50:60, 100:110] = 200  # 10 x 10 square, rows 50..59, cols 100..109
    blobs = detect_blobs(image_of(px), threshold=100)
    assert len(blobs) == 1
    b = blobs[0]
    assert b.area == 100
    assert b.peak == 200
    assert b.centroid == pytest.approx((104.5, 54.5))
    assert b.bbox == (100, 50, 109, 59)


def test_detect_blobs_intensity_weighted_centroid():
    px = np.zeros((10, 10), dtype=np.uint8)
    px[5, 2] = 100
    px[5, 3] = 100
    px[5, 4] = 200
    px[5, 5] = 200
    blobs = detect_blobs(image_of(px), threshold=50,
                         cfg=TrackerConfig(min_area_px=1))
    cx = (2 * 100 + 3 * 100 + 4 * 200 + 5 * 200) / 600
    assert blobs[0].centroid == pytest.approx((cx, 5.0))


def test_detect_blobs_area_filter_and_order():
    px = np.zeros((50, 50), dtype=np.uint8)
    px[5:10, 5:10] = 210      # area 25
    px[30:33, 30:33] = 220    # area 9
    px[20, 20] = 230          # area 1, below min_area_px
    blobs = detect_blobs(image_of(px), threshold=150)
    assert [b.area for b in blobs] == [25, 9]


def test_detect_blobs_eight_connectivity():
    px = np.zeros((10, 10), dtype=np.uint8)
    # diagonal chain: one component under 8-connectivity
    for i in range(4):
        px[i, i] = 255
    blobs = detect_blobs(image_of(px), threshold=100,
                         cfg=TrackerConfig(min_area_px=1))
    assert len(blobs) == 1
    assert blobs[0].area == 4


def test_detect_blobs_empty_image():
    assert detect_blobs(image_of(np.zeros((20, 20))), threshold=1) == []


def test_select_target_prefers_nearest_to_prediction():
    near = Blob(centroid=(10.0, 10.0), area=5, peak=100, bbox=(9, 9, 11, 11))
    big = Blob(centroid=(100.0, 100.0), area=500, peak=200,
               bbox=(80, 80, 120, 120))
    assert select_target([near, big], predicted=(12.0, 9.0)) is near
    assert select_target([near, big], predicted=None) is big


def test_select_target_rejects_empty():
    with pytest.raises(NoBlobsError):
        select_target([])


def test_write_mask_pgm(tmp_path):
    px = np.zeros((4, 6), dtype=np.uint8)
    px[1, 2] = 200
    path = tmp_path / "mask.pgm"
    write_mask_pgm(path, image_of(px), threshold=100)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n6 4\n255\n")
    payload = np.frombuffer(blob[len(b"P5\n6 4\n255\n"):], dtype=np.uint8)
    assert payload.reshape(4, 6)[1, 2] == 255
    assert payload.sum() == 255
