"""Ground-truth virtual optical rig.

Everything the calibration and runtime are validated against lives here: a
two-axis steering mirror with a known nonlinear drive map, a collimated laser
with a cone spot model, stereo cameras with retroreflective tag imaging, and
scan-board geometry for calibration sequences.

The steering device's true pose and drive map are "hidden" in the sense that
the calibration pipeline never reads them; tests do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import BeamConfig, DeviceConfig, RigConfig, SceneConfig, SimConfig
from .errors import (
    BeamMissesBoardError,
    DegenerateInputError,
    DriveOutOfRangeError,
    OutOfBoundsError,
)
from .geometry import (
    Camera,
    Plane3,
    Ray3,
    SteeringPose,
    StereoRig,
    Vec3,
    rotvec_to_matrix,
    unit,
    vec3,
)

# --- stereo rig construction -------------------------------------------------


def make_rig(cfg: RigConfig, decimation: int = 1) -> StereoRig:
    """Build the stereo pair: cameras on the x axis looking along +z.

    ``decimation`` bins the sensor n x n (runtime profile); intrinsics scale
    accordingly while extrinsics, and therefore the world frame, stay put.
    """
    w = cfg.image_width // decimation
    h = cfg.image_height // decimation
    f = cfg.focal_px / decimation

    def cam(x: float) -> Camera:
        return Camera(fx=f, fy=f, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0,
                      width=w, height=h, rotation=np.eye(3),
                      center=vec3(x, 0.0, 0.0))

    return StereoRig(left=cam(-cfg.baseline_m / 2), right=cam(+cfg.baseline_m / 2))


def rig_origin(rig: StereoRig) -> Vec3:
    return 0.5 * (rig.left.center + rig.right.center)


# --- steering device ----------------------------------------------------------


def device_pose(cfg: DeviceConfig) -> SteeringPose:
    return SteeringPose(rotation=rotvec_to_matrix(np.array(cfg.pose_rotvec)),
                        translation=np.array(cfg.pose_translation_m))


def angles_to_direction(alpha: float, beta: float) -> Vec3:
    """Device-frame unit direction with atan2(dx,dz)=alpha, atan2(dy,dz)=beta."""
    return unit(np.array([math.tan(alpha), math.tan(beta), 1.0]))


def direction_to_angles(d: Vec3) -> tuple[float, float]:
    return math.atan2(d[0], d[2]), math.atan2(d[1], d[2])


class SteeringDevice:
    """Ground-truth steerable mirror (optical angles, radians).

    The true drive map is quadratic in the outgoing angles:

        a = alpha/g + kappa*alpha*beta  (+ cubic*alpha^3 in mismatch mode)
        b = beta/g + kappa'*beta^2

    which a degree-2 bivariate regression represents exactly, so calibration
    can be checked to numerical precision.  ``steer_to`` inverts it with a
    Newton solve.  Slew is a rate-limited first-order lag whose time constant
    gives the configured small-step bandwidth.

    Single-threaded state machine: do not share one instance across threads.
    """

    def __init__(self, cfg: DeviceConfig):
        self.cfg = cfg
        self.pose = device_pose(cfg)
        self.tau_s = 1.0 / (2.0 * math.pi * cfg.bandwidth_hz)
        self.alpha = 0.0
        self.beta = 0.0
        self._target = (0.0, 0.0)

    # -- drive map -------------------------------------------------------

    def angles_to_drive(self, alpha: float, beta: float) -> tuple[float, float]:
        c = self.cfg
        a = alpha / c.gain_rad + c.cross_coupling * alpha * beta
        if c.cubic_coupling:
            a += c.cubic_coupling * alpha ** 3
        b = beta / c.gain_rad + c.quad_coupling * beta * beta
        return a, b

    def drive_to_angles(self, a: float, b: float) -> tuple[float, float]:
        """Invert the drive map (Newton; the map is near-linear)."""
        c = self.cfg
        alpha, beta = c.gain_rad * a, c.gain_rad * b
        for _ in range(60):
            fa, fb = self.angles_to_drive(alpha, beta)
            ra, rb = fa - a, fb - b
            if abs(ra) < 1e-14 and abs(rb) < 1e-14:
                break
            j00 = 1.0 / c.gain_rad + c.cross_coupling * beta \
                + 3.0 * c.cubic_coupling * alpha * alpha
            j01 = c.cross_coupling * alpha
            j11 = 1.0 / c.gain_rad + 2.0 * c.quad_coupling * beta
            det = j00 * j11
            alpha -= (ra * j11 - rb * j01) / det
            beta -= rb / j11
        return alpha, beta

    # -- slew state ------------------------------------------------------

    def command(self, drive: tuple[float, float]) -> None:
        a, b = drive
        if not (-1.0 <= a <= 1.0 and -1.0 <= b <= 1.0):
            raise DriveOutOfRangeError(f"drive {drive} outside [-1, 1]^2")
        alpha, beta = self.drive_to_angles(a, b)
        lim = self.cfg.optical_limit_rad
        self._target = (max(-lim, min(lim, alpha)), max(-lim, min(lim, beta)))

    def step(self, dt: float) -> None:
        if dt <= 0:
            raise DegenerateInputError("dt must be positive")
        blend = 1.0 - math.exp(-dt / self.tau_s)
        max_step = self.cfg.max_rate_rad_s * dt
        for name, target in (("alpha", self._target[0]), ("beta", self._target[1])):
            cur = getattr(self, name)
            delta = (target - cur) * blend
            delta = max(-max_step, min(max_step, delta))
            setattr(self, name, cur + delta)

    def settle(self) -> None:
        self.alpha, self.beta = self._target

    def steer_to(self, drive: tuple[float, float], dt: float) -> Ray3:
        """Command a drive, advance the slew by dt, return the beam ray."""
        self.command(drive)
        self.step(dt)
        return self.ray()

    def ray(self) -> Ray3:
        d = self.pose.rotation @ angles_to_direction(self.alpha, self.beta)
        return Ray3(self.pose.translation.copy(), d)


# --- laser radiometry ---------------------------------------------------------


def chain_throughput(chain) -> float:
    """Product of element throughputs; empty chain is lossless."""
    total = 1.0
    for t in chain:
        if not 0.0 < t <= 1.0:
            raise DegenerateInputError(f"throughput {t} outside (0, 1]")
        total *= t
    return total


def delivered_power_mw(beam: BeamConfig) -> float:
    return (beam.electrical_power_w * 1000.0 * beam.wall_plug_efficiency
            * chain_throughput(beam.chain))


def spot_radius_m(beam: BeamConfig, distance_m: float) -> float:
    r = (beam.spot_diameter_m / 2.0
         + math.tan(beam.divergence_rad) * (distance_m - beam.reference_distance_m))
    return max(r, 1e-6)


def irradiance_at(beam: BeamConfig, device: SteeringDevice, target: Vec3,
                  surface_normal: Vec3) -> float:
    """Irradiance (mW/cm^2) delivered at ``target`` on a surface.

    Power spreads over the spot at the target's distance along the beam;
    tophat is uniform inside the spot and zero outside, gaussian has the same
    on-axis irradiance with a 1/e^2 radius of sqrt(2) x the spot radius (both
    integrate to the delivered power).  Incidence projects by cos(theta).
    """
    ray = device.ray()
    return irradiance_on_ray(beam, ray, target, surface_normal)


def irradiance_on_ray(beam: BeamConfig, ray: Ray3, target: Vec3,
                      surface_normal: Vec3) -> float:
    rel = np.asarray(target, dtype=float) - ray.origin
    s = float(rel @ ray.direction)
    if s <= 0.0:
        return 0.0
    r2 = float(rel @ rel) - s * s
    w = spot_radius_m(beam, s)
    p_mw = delivered_power_mw(beam)
    area_cm2 = math.pi * (w * 100.0) ** 2
    level = p_mw / area_cm2
    cos_inc = abs(float(unit(np.asarray(surface_normal, dtype=float)) @ ray.direction))
    if beam.profile == "gaussian":
        return level * math.exp(-r2 / (w * w)) * cos_inc
    if r2 > w * w:
        return 0.0
    return level * cos_inc


# --- scene and rendering ------------------------------------------------------


@dataclass
class SimScene:
    """Single-tag scene: a robot (or probe target) on or above the floor."""

    cfg: SceneConfig
    robot_xy: tuple[float, float] = (0.0, 0.0)
    heading_rad: float = 0.0
    probe_point: Vec3 | None = None  # overrides the floor tag (grid/arm rigs)
    obstacles: list[tuple[float, float, float]] = field(default_factory=list)
    # (x, y, radius) cylinders on the floor

    def target_point(self) -> Vec3:
        if self.probe_point is not None:
            return np.asarray(self.probe_point, dtype=float)
        return vec3(self.robot_xy[0], self.robot_xy[1], self.cfg.ground_depth_m)

    def in_testbed(self) -> bool:
        half = self.cfg.testbed_size_m / 2.0
        x, y = self.robot_xy
        return abs(x) <= half and abs(y) <= half


@dataclass
class SyntheticImage:
    pixels: np.ndarray  # uint8, row-major, origin top-left

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _splat_ring(img: np.ndarray, u0: float, v0: float, r_out: float,
                r_in: float, peak: float) -> None:
    """Add an antialiased annulus (soft 1 px edges) centered at (u0, v0)."""
    h, w = img.shape
    lo_x = max(0, int(math.floor(u0 - r_out - 2)))
    hi_x = min(w, int(math.ceil(u0 + r_out + 3)))
    lo_y = max(0, int(math.floor(v0 - r_out - 2)))
    hi_y = min(h, int(math.ceil(v0 + r_out + 3)))
    if lo_x >= hi_x or lo_y >= hi_y:
        return
    xs = np.arange(lo_x, hi_x) - u0
    ys = np.arange(lo_y, hi_y) - v0
    rr = np.hypot(xs[None, :], ys[:, None])
    cover = np.clip(r_out - rr + 0.5, 0.0, 1.0)
    if r_in > 0:
        cover *= np.clip(rr - r_in + 0.5, 0.0, 1.0)
    img[lo_y:hi_y, lo_x:hi_x] += peak * cover


def _splat_gaussian(img: np.ndarray, u0: float, v0: float, sigma: float,
                    peak: float) -> None:
    h, w = img.shape
    reach = 4.0 * sigma + 2
    lo_x = max(0, int(math.floor(u0 - reach)))
    hi_x = min(w, int(math.ceil(u0 + reach)))
    lo_y = max(0, int(math.floor(v0 - reach)))
    hi_y = min(h, int(math.ceil(v0 + reach)))
    if lo_x >= hi_x or lo_y >= hi_y:
        return
    xs = np.arange(lo_x, hi_x) - u0
    ys = np.arange(lo_y, hi_y) - v0
    g = np.exp(-(xs[None, :] ** 2 + ys[:, None] ** 2) / (2.0 * sigma * sigma))
    img[lo_y:hi_y, lo_x:hi_x] += peak * g


def _render_view(cam: Camera, bg_mean: float, noise_sigma: float,
                 rng: np.random.Generator, splats) -> SyntheticImage:
    img = np.full((cam.height, cam.width), bg_mean, dtype=np.float64)
    img += rng.normal(0.0, noise_sigma, size=img.shape)
    for kind, point, params in splats:
        try:
            u0, v0 = cam.project(point)
        except OutOfBoundsError:
            continue
        depth = float((point - cam.center)[2])
        if depth <= 0:
            continue
        if kind == "ring":
            r_out_m, r_in_m, peak = params
            _splat_ring(img, u0, v0, cam.fx * r_out_m / depth,
                        cam.fx * r_in_m / depth, peak)
        else:
            sigma_m, peak = params
            _splat_gaussian(img, u0, v0, max(cam.fx * sigma_m / depth, 0.6), peak)
    np.clip(img, 0.0, 255.0, out=img)
    return SyntheticImage(np.rint(img).astype(np.uint8))


def render_stereo_pair(scene: SimScene, rig: StereoRig, rig_cfg: RigConfig,
                       led_power_w: float | None = None,
                       seed: int = 0) -> tuple[SyntheticImage, SyntheticImage]:
    """Render the retroreflective tag over ambient background.

    Filtered imaging (the runtime default) passes the tag return but only
    ``filter_ambient_transmission`` of ambient light; the steered laser never
    registers.  Peak tag intensity follows the LED round trip: ~1/d^4.
    Deterministic for a fixed seed.
    """
    led = rig_cfg.led_power_w if led_power_w is None else led_power_w
    filtered = scene.cfg.imaging == "filtered"
    ambient = scene.cfg.ambient_lux * rig_cfg.ambient_gain_dn_per_lux
    if filtered:
        ambient *= rig_cfg.filter_ambient_transmission
    target = scene.target_point()
    rng = np.random.default_rng(seed)
    out = []
    for cam in (rig.left, rig.right):
        d = float(np.linalg.norm(target - cam.center))
        peak = rig_cfg.led_gain_dn_m4_per_w * led / max(d, 1e-6) ** 4
        splats = [("ring", target,
                   (scene.cfg.tag_outer_radius_m, scene.cfg.tag_inner_radius_m,
                    peak))]
        out.append(_render_view(cam, ambient, rig_cfg.read_noise_dn, rng, splats))
    return out[0], out[1]


def render_spot_pair(spot_point: Vec3, rig: StereoRig, rig_cfg: RigConfig,
                     scene_cfg: SceneConfig, spot_sigma_m: float = 0.006,
                     peak_dn: float = 160.0,
                     seed: int = 0) -> tuple[SyntheticImage, SyntheticImage]:
    """Render the laser spot on a scan board through unfiltered imaging
    (calibration-time view; full ambient background, gaussian spot)."""
    ambient = scene_cfg.ambient_lux * rig_cfg.ambient_gain_dn_per_lux
    rng = np.random.default_rng(seed)
    out = []
    for cam in (rig.left, rig.right):
        splats = [("gauss", np.asarray(spot_point, float), (spot_sigma_m, peak_dn))]
        out.append(_render_view(cam, ambient, rig_cfg.read_noise_dn, rng, splats))
    return out[0], out[1]


def write_pgm(path, image: SyntheticImage) -> None:
    """Binary PGM (P5) dump for eyeballing intermediate imagery."""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n255\n".encode())
        fh.write(image.pixels.tobytes())


# --- scan boards --------------------------------------------------------------


@dataclass
class ScanBoard:
    """Bounded plane the calibration beam is scanned across."""

    center: Vec3
    e1: Vec3  # in-plane unit axes
    e2: Vec3
    half_size_m: float

    @property
    def normal(self) -> Vec3:
        return np.cross(self.e1, self.e2)

    def plane(self) -> Plane3:
        n = unit(self.normal)
        return Plane3(n, float(n @ self.center))

    def intersect(self, ray: Ray3) -> Vec3:
        n = self.normal
        denom = float(n @ ray.direction)
        if abs(denom) < 1e-12:
            raise BeamMissesBoardError("beam parallel to board")
        t = float(n @ (self.center - ray.origin)) / denom
        if t <= 0:
            raise BeamMissesBoardError("board is behind the beam")
        p = ray.at(t)
        q = p - self.center
        if abs(float(q @ self.e1)) > self.half_size_m or \
                abs(float(q @ self.e2)) > self.half_size_m:
            raise BeamMissesBoardError("beam lands off the board")
        return p


def make_board(depth_m: float, tilt_deg: float, size_m: float) -> ScanBoard:
    """Board roughly facing the rig at the given depth, tilted about x."""
    t = math.radians(tilt_deg)
    e1 = vec3(1.0, 0.0, 0.0)
    e2 = vec3(0.0, math.cos(t), math.sin(t))
    return ScanBoard(center=vec3(0.0, 0.0, depth_m), e1=e1, e2=e2,
                     half_size_m=size_m / 2.0)


@dataclass
class ScanSample:
    drive: tuple[float, float]
    hit: Vec3 | None
    pixel_left: tuple[float, float] | None
    pixel_right: tuple[float, float] | None
    ok: bool


def scan_sequence(device: SteeringDevice, rig: StereoRig, board: ScanBoard,
                  drives) -> list[ScanSample]:
    """Settled beam hits on a board with their exact stereo projections.

    Misses (board behind the device, off the board, or off-image) are
    flagged per sample, not fatal.  Pixel noise is the session synthesizer's
    job, not this one's.
    """
    samples: list[ScanSample] = []
    for drive in drives:
        device.command(drive)
        device.settle()
        try:
            hit = board.intersect(device.ray())
            pl = rig.left.project(hit)
            pr = rig.right.project(hit)
            ok = rig.left.pixel_in_bounds(pl) and rig.right.pixel_in_bounds(pr)
        except BeamMissesBoardError:
            samples.append(ScanSample(tuple(drive), None, None, None, False))
            continue
        samples.append(ScanSample(tuple(drive), hit, pl, pr, ok))
    return samples


def build_device(cfg: SimConfig) -> SteeringDevice:
    return SteeringDevice(cfg.device)
