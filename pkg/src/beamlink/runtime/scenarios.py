"""Experiment scenarios run on top of the loop engine.

The radiometry studies (grid test, velocity sweep) bypass the rendered
tracker and feed true target positions through the steering path: they
measure pointing and beam physics, and adding tracker pixel noise would
change the subject of the measurement.  The robot scenarios run the full
render - detect - triangulate - steer - modulate - decode pipeline.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..calibration import SteeringCalibration, steer_to_point
from ..config import SimConfig, copy_config
from ..errors import (
    BehindDeviceError,
    DriveOutOfRangeError,
    UnreachablePointError,
)
from ..optics import SimScene, build_device, irradiance_at, irradiance_on_ray
from ..geometry import vec3
from .loop import RunLog, SimulationEngine

FLOOR_NORMAL = vec3(0.0, 0.0, -1.0)

# Reference tape arc for the path-follow demo; the service reuses it so the
# console can draw the same circle the pilot is holding.
PATH_ARC_CENTER = (-0.25, 0.0)
PATH_ARC_RADIUS = 0.30
PATH_OFFSET_NORM = 0.57


# ---------------------------------------------------------------------------
# Static hold (loop sanity oracle)


def static_hold(cfg: SimConfig, calib: SteeringCalibration,
                duration_s: float = 2.0, seed: int | None = None,
                robot_xy: tuple[float, float] = (0.05, -0.04),
                observation: str = "render"):
    """Track a stationary robot; returns (RunLog, direct irradiance query).

    The direct query points the ground-truth device exactly at the tag and
    asks the radiometry model, bypassing the loop entirely.
    """
    scene = SimScene(cfg.scene, robot_xy=robot_xy)
    engine = SimulationEngine(cfg, calib, scene=scene, seed=seed,
                              observation=observation, locomotion=False)
    log = engine.run(duration_s)
    target = vec3(robot_xy[0], robot_xy[1], cfg.scene.ground_depth_m)
    device = build_device(cfg)
    alpha, beta = _true_angles(device, target)
    device.command(device.angles_to_drive(alpha, beta))
    device.settle()
    direct = irradiance_at(cfg.beam, device, target, FLOOR_NORMAL)
    return log, direct


def _true_angles(device, target):
    d = device.pose.rotation.T @ (np.asarray(target, float)
                                  - device.pose.translation)
    return math.atan2(d[0], d[2]), math.atan2(d[1], d[2])


# ---------------------------------------------------------------------------
# Grid irradiance uniformity


@dataclass
class GridResult:
    rows: list[tuple]  # (depth_m, azimuth_deg, x, y, irradiance)
    mean: float
    rel_std: float
    per_depth_rel_std: dict[float, float]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("depth_m,azimuth_deg,x_m,y_m,irradiance_mw_cm2\n")
            for r in self.rows:
                fh.write(",".join(repr(float(v)) for v in r) + "\n")

    def summary(self) -> dict:
        return {"points": len(self.rows), "mean_mw_cm2": self.mean,
                "rel_std": self.rel_std,
                "per_depth_rel_std": {str(k): v for k, v
                                      in self.per_depth_rel_std.items()}}


def grid_test(cfg: SimConfig, calib: SteeringCalibration,
              depths_m=(0.7, 1.0, 1.3), radius_m: float = 0.24,
              n_azimuths: int = 8, trials: int = 3) -> GridResult:
    """Steer to a ring of points at each depth and record irradiance.

    Raises:
        UnreachablePointError: a grid point needs more deflection than the
            device can produce.
    """
    device = build_device(cfg)
    rows = []
    by_depth: dict[float, list[float]] = {d: [] for d in depths_m}
    for depth in depths_m:
        for k in range(n_azimuths):
            phi = 2.0 * math.pi * k / n_azimuths
            target = vec3(radius_m * math.cos(phi), radius_m * math.sin(phi),
                          depth)
            try:
                drive = steer_to_point(calib, target)
            except (DriveOutOfRangeError, BehindDeviceError) as e:
                raise UnreachablePointError(
                    f"grid point at depth {depth} m, azimuth "
                    f"{math.degrees(phi):.0f} deg: {e}") from e
            vals = []
            for _ in range(trials):
                device.command(drive)
                device.settle()
                vals.append(irradiance_at(cfg.beam, device, target,
                                          FLOOR_NORMAL))
            mean_irr = float(np.mean(vals))
            if mean_irr <= 0.0:
                raise UnreachablePointError(
                    f"beam misses the grid point at depth {depth} m, "
                    f"azimuth {math.degrees(phi):.0f} deg")
            rows.append((depth, math.degrees(phi), target[0], target[1],
                         mean_irr))
            by_depth[depth].append(mean_irr)
    allv = np.array([r[4] for r in rows])
    per_depth = {d: float(np.std(v) / np.mean(v))
                 for d, v in by_depth.items()}
    return GridResult(rows=rows, mean=float(allv.mean()),
                      rel_std=float(allv.std() / allv.mean()),
                      per_depth_rel_std=per_depth)


# ---------------------------------------------------------------------------
# Velocity sweep (rotating arm)


@dataclass
class SweepResult:
    speeds_cm_s: list[float]
    medians: list[float]
    mean_pointing_err_m: list[float]

    def drop_percent(self) -> list[float]:
        base = self.medians[0]
        return [100.0 * (base - m) / base for m in self.medians]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("speed_cm_s,median_irradiance_mw_cm2,drop_pct,"
                     "mean_pointing_err_m\n")
            for s, m, d, e in zip(self.speeds_cm_s, self.medians,
                                  self.drop_percent(),
                                  self.mean_pointing_err_m):
                fh.write(f"{s!r},{m!r},{d!r},{e!r}\n")

    def summary(self) -> dict:
        return {"speeds_cm_s": self.speeds_cm_s, "medians": self.medians,
                "drop_percent": self.drop_percent(),
                "mean_pointing_err_m": self.mean_pointing_err_m}


def velocity_sweep(cfg: SimConfig, calib: SteeringCalibration,
                   speeds_cm_s=(0.3, 1.0, 3.0, 8.7),
                   arm_length_m: float = 0.020,
                   rotations: float = 10.0) -> SweepResult:
    """Track a target circling on a rotating arm at each linear speed.

    Runs with the gaussian beam profile: the flat top of the default profile
    would hide millimeter tracking lag entirely, and the question here is
    precisely how lag erodes delivered power.  The loop runs at the mirror
    rate (all slower schedules divide it) with the configured camera rate
    and processing latency.
    """
    cfg = copy_config(cfg)
    cfg.beam.profile = "gaussian"
    rate = cfg.loop.mirror_rate_hz
    dt = 1.0 / rate
    cam_ticks = max(1, round(rate / cfg.loop.camera_rate_hz))
    samp_ticks = max(1, round(rate / cfg.channel.adc_rate_hz))
    latency = cfg.loop.processing_latency_s
    depth = cfg.scene.ground_depth_m
    medians, errs = [], []
    for v_cm in speeds_cm_s:
        v = v_cm / 100.0
        omega = v / arm_length_m
        n = round(rotations * 2.0 * math.pi / omega * rate)
        device = build_device(cfg)
        pending: deque[tuple[float, tuple[float, float]]] = deque()
        samples, perr = [], []
        for k in range(n):
            t = k * dt
            ang = omega * t
            target = vec3(arm_length_m * math.cos(ang),
                          arm_length_m * math.sin(ang), depth)
            if k % cam_ticks == 0:
                pending.append((t + latency, steer_to_point(calib, target)))
            latest = None
            while pending and pending[0][0] <= t:
                latest = pending.popleft()[1]
            if latest is not None:
                device.command(latest)
            device.step(dt)
            if k % samp_ticks == 0:
                ray = device.ray()
                samples.append(irradiance_on_ray(cfg.beam, ray, target,
                                                 FLOOR_NORMAL))
                rel = target - ray.origin
                s = float(rel @ ray.direction)
                perr.append(math.sqrt(max(float(rel @ rel) - s * s, 0.0)))
        medians.append(float(np.median(samples)))
        errs.append(float(np.mean(perr)))
    return SweepResult(speeds_cm_s=list(speeds_cm_s), medians=medians,
                       mean_pointing_err_m=errs)


# ---------------------------------------------------------------------------
# Robot scenarios (full pipeline)


@dataclass
class ScenarioResult:
    log: RunLog
    summary: dict = field(default_factory=dict)


def path_follow(cfg: SimConfig, calib: SteeringCalibration,
                seed: int | None = None, duration_s: float = 60.0,
                trace: list[str] | None = None,
                arc_center=PATH_ARC_CENTER, arc_radius: float = PATH_ARC_RADIUS,
                initial_offset_norm: float = PATH_OFFSET_NORM) -> ScenarioResult:
    """Follow a circular tape arc, holding the initial sideways offset.

    The built-in pilot plays the role of the human operator: at every symbol
    slot it compares the robot heading against the tangent of its offset
    circle plus a proportional pull toward that circle, and issues L/R/F.
    Offsets are normalized by the robot diameter.
    """
    body = 2.0 * cfg.robot.body_radius_m
    offset0 = initial_offset_norm * body
    cx, cy = arc_center
    theta0 = 0.0
    start = (cx + (arc_radius + offset0) * math.cos(theta0),
             cy + (arc_radius + offset0) * math.sin(theta0))
    scene = SimScene(cfg.scene, robot_xy=start, heading_rad=theta0 + math.pi / 2)
    engine = SimulationEngine(cfg, calib, scene=scene, seed=seed,
                              decode_rate_hz=cfg.channel.adc_rate_hz)

    integral = 0.0

    def pilot(eng: SimulationEngine) -> str:
        # PI on the radial error: turn quanta are coarse (a whole slot of
        # pivoting), so proportional action alone parks the robot a few mm
        # off the circle; the integral supplies that standing correction.
        nonlocal integral
        r = eng.robot
        dx, dy = r.x_m - cx, r.y_m - cy
        theta = math.atan2(dy, dx)
        radial_err = math.hypot(dx, dy) - (arc_radius + offset0)
        integral = max(-0.05, min(0.05, integral + 0.1 * radial_err))
        # outside the circle (err > 0) -> rotate the goal heading CCW of the
        # tangent, which for a CCW orbit points back toward the center
        pull = max(-0.5, min(0.5, 6.0 * radial_err + 4.0 * integral))
        desired = theta + math.pi / 2 + pull
        err = math.atan2(math.sin(desired - r.heading_rad),
                         math.cos(desired - r.heading_rad))
        if err > 0.04:
            return "L"
        if err < -0.04:
            return "R"
        return "F"

    log = engine.run(duration_s, commands=trace if trace is not None else pilot)
    xs, ys = log.column("x_m"), log.column("y_m")
    offsets = [abs(math.hypot(x - cx, y - cy) - arc_radius) / body
               for x, y in zip(xs, ys)]
    return ScenarioResult(log=log, summary={
        "initial_offset": offsets[0],
        "median_offset": float(np.median(offsets)),
        "offset_ratio": float(np.median(offsets)) / offsets[0],
        "collision": engine.collided,
    })


# Avoidance traces open with idle slots: beam acquisition leaves a coupling
# transient (tau = RC = 0.47 s) on the receiver, and commands sent before it
# settles are read as idle.  An operator sees the same thing as a link-up
# delay.
AVOID_TRACES = {
    "forward": ["F"] * 8,
    "avoid_left": ["F"] * 5 + ["L"] * 7,
    "avoid_right": ["F"] * 5 + ["R"] * 7,
}


def obstacle_avoid(cfg: SimConfig, calib: SteeringCalibration,
                   trace="forward", seed: int | None = None,
                   duration_s: float = 40.0,
                   obstacle=(0.0, 0.0, 0.03)) -> ScenarioResult:
    """Drive at an obstacle; scripted traces either hit it or steer around.

    ``trace`` is a named built-in (forward / avoid_left / avoid_right) or an
    explicit per-slot symbol list.  Once the trace is exhausted the link goes
    idle, which the robot reads as F.
    """
    symbols = AVOID_TRACES[trace] if isinstance(trace, str) else list(trace)
    scene = SimScene(cfg.scene, robot_xy=(-0.15, 0.0), heading_rad=0.0,
                     obstacles=[tuple(obstacle)])
    engine = SimulationEngine(cfg, calib, scene=scene, seed=seed,
                              decode_rate_hz=cfg.channel.adc_rate_hz)
    log = engine.run(duration_s, commands=symbols)
    xs, ys = log.column("x_m"), log.column("y_m")
    ox, oy, orad = obstacle
    clearance = min(math.hypot(x - ox, y - oy) for x, y in zip(xs, ys)) \
        - orad - cfg.robot.body_radius_m
    return ScenarioResult(log=log, summary={
        "collision": engine.collided,
        "min_clearance_m": clearance,
        "final_xy": [xs[-1], ys[-1]],
    })


def load_trace(path) -> list[str]:
    """Command trace file: JSON ``{"commands": ["F", "L", ...]}``."""
    data = json.loads(open(path).read())
    cmds = data["commands"] if isinstance(data, dict) else data
    if not all(isinstance(c, str) for c in cmds):
        raise ValueError("trace commands must be symbol strings")
    return list(cmds)
