"""Shared fixtures.

``cfg`` and ``exact_calibration`` are session-scoped and must be treated as
read-only; tests that need a variant config work on ``copy_config(cfg)``.
"""

from __future__ import annotations

import pytest

from beamlink import calibration as cal
from beamlink.config import SimConfig


@pytest.fixture(scope="session")
def cfg() -> SimConfig:
    return SimConfig()


@pytest.fixture(scope="session")
def exact_calibration(cfg):
    """Calibration recovered from a noiseless synthetic session."""
    session = cal.synthesize_session(cfg, seed=1, noise_px=0.0)
    return cal.calibrate(session, cfg.tol)
