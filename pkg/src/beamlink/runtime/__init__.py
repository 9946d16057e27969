"""Closed-loop runtime: engine, scenario harnesses, and the live service."""

from .loop import RunLog, SimulationEngine
from .scenarios import (
    GridResult,
    SweepResult,
    grid_test,
    obstacle_avoid,
    path_follow,
    static_hold,
    velocity_sweep,
)

__all__ = [
    "RunLog",
    "SimulationEngine",
    "GridResult",
    "SweepResult",
    "grid_test",
    "obstacle_avoid",
    "path_follow",
    "static_hold",
    "velocity_sweep",
]
