"""Steering calibration: recover the device pose (R, T) and the angle-to-drive
mapping from scan observations.

Pipeline (after camera intrinsics, which are taken as given):

1. Axis scans: sweep drive a with b = 0 and vice versa across >= 2 board
   positions, triangulate the spot hits, and fit one quadratic surface per
   scanned axis.  The two surfaces meet along the drive-(0,0) beam, which is
   the device z axis; the surface tangent planes there contain the other two
   axes, so their normals pin x and y up to sign.  Signs come from the drive
   sweep direction, and the near-orthogonal triad is projected onto the
   nearest rotation.
2. The same axis-scan points, grouped by drive value across board positions,
   fall on one line per drive ("virtual beams").  The least-squares meeting
   point of the bundle is the device origin T.
3. A spiral scan on one board exercises both axes together; regressing drive
   against the 9 degree-2 monomials of the device-frame angles yields the
   mapping functions.

Angle convention: for a device-frame unit direction d,
alpha = atan2(d_x, d_z) and beta = atan2(d_y, d_z).  The mapping coefficient
m[i][j] multiplies alpha^i * beta^j.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ScanConfig, SimConfig, Tolerances
from .errors import (
    BehindDeviceError,
    DriveOutOfRangeError,
    NonOrthogonalAxesError,
    RankDeficientError,
    TooFewGroupsError,
    UnderdeterminedError,
)
from .geometry import (
    Camera,
    Ray3,
    SteeringPose,
    StereoRig,
    Vec3,
    fit_line,
    fit_quadratic_surface,
    intersect_surfaces_axis,
    nearest_point_to_lines,
    nearest_rotation,
    tangent_plane,
    triangulate,
    unit,
)
from .optics import build_device, make_board, make_rig, rig_origin, scan_sequence

SESSION_SCHEMA_VERSION = 1
CALIBRATION_SCHEMA_VERSION = 1

# Monomial order for serialized mapping coefficients: (i, j) lexicographic,
# i.e. row-major over m[i][j] with i the alpha power.
MONOMIAL_POWERS = [(i, j) for i in range(3) for j in range(3)]


@dataclass
class Observation:
    kind: str  # "axis_a" | "axis_b" | "spiral"
    board: int
    drive: tuple[float, float]
    pixel_left: tuple[float, float]
    pixel_right: tuple[float, float]


@dataclass
class CalibrationSession:
    rig: StereoRig
    observations: list[Observation]

    def of_kind(self, *kinds: str) -> list[Observation]:
        return [o for o in self.observations if o.kind in kinds]

    def n_boards(self) -> int:
        axis = self.of_kind("axis_a", "axis_b")
        return len({o.board for o in axis})

    def validate(self) -> None:
        """Session invariants: >= 2 board positions, >= 9 spiral samples."""
        if self.n_boards() < 2:
            raise TooFewGroupsError(
                "axis scans need at least two board positions")
        if len(self.of_kind("spiral")) < 9:
            raise UnderdeterminedError(
                "spiral scan needs at least 9 samples for a degree-2 fit")


def triangulate_observation(session: CalibrationSession, obs: Observation,
                            tol: Tolerances | None = None) -> Vec3:
    return triangulate(session.rig, obs.pixel_left, obs.pixel_right, tol)


def spiral_drives(scan: ScanConfig) -> list[tuple[float, float]]:
    """Outward spiral covering both drive axes (golden-angle spacing)."""
    golden = 2.399963229728653
    out = []
    for k in range(scan.spiral_samples):
        r = scan.spiral_min_drive + (scan.spiral_max_drive - scan.spiral_min_drive) \
            * k / max(scan.spiral_samples - 1, 1)
        out.append((r * np.cos(k * golden), r * np.sin(k * golden)))
    return out


def axis_drives(scan: ScanConfig) -> np.ndarray:
    return np.linspace(-scan.axis_drive_span, scan.axis_drive_span,
                       scan.drives_per_axis)


def synthesize_session(cfg: SimConfig, seed: int | None = None,
                       noise_px: float | None = None,
                       rig: StereoRig | None = None,
                       device=None, boards=None) -> CalibrationSession:
    """Generate a scan session from the simulator.

    ``noise_px`` is the per-axis Gaussian centroid jitter; None takes the rig
    default, 0 gives exact projections.  ``rig``/``device``/``boards`` allow
    running the same protocol in a transformed world.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    sigma = cfg.rig.pixel_noise_px if noise_px is None else noise_px
    rig = rig or make_rig(cfg.rig)
    device = device or build_device(cfg)
    if boards is None:
        boards = [make_board(d, t, cfg.scan.board_size_m)
                  for d, t in zip(cfg.scan.board_depths_m, cfg.scan.board_tilts_deg)]
    drives = axis_drives(cfg.scan)
    obs: list[Observation] = []

    def record(kind: str, board_idx: int, board, drive_list):
        for s in scan_sequence(device, rig, board, drive_list):
            if not s.ok:
                continue
            pl = tuple(np.asarray(s.pixel_left) + rng.normal(0.0, sigma, 2)) \
                if sigma > 0 else s.pixel_left
            pr = tuple(np.asarray(s.pixel_right) + rng.normal(0.0, sigma, 2)) \
                if sigma > 0 else s.pixel_right
            obs.append(Observation(kind, board_idx, tuple(s.drive), pl, pr))

    for k, board in enumerate(boards):
        record("axis_a", k, board, [(a, 0.0) for a in drives])
        record("axis_b", k, board, [(0.0, b) for b in drives])
    spiral_board = min(cfg.scan.spiral_board_index, len(boards) - 1)
    record("spiral", spiral_board, boards[spiral_board], spiral_drives(cfg.scan))
    return CalibrationSession(rig=rig, observations=obs)


def with_focal_error(rig: StereoRig, rel: float) -> StereoRig:
    """Rig whose assumed focal lengths are off by the given relative error
    (stage-1 sensitivity probe)."""

    def bump(c: Camera) -> Camera:
        return replace(c, fx=c.fx * (1.0 + rel), fy=c.fy * (1.0 + rel))

    return StereoRig(left=bump(rig.left), right=bump(rig.right))


def recover_rotation(session: CalibrationSession,
                     tol: Tolerances | None = None):
    """Stage-2a: device axes from the two axis-scan surfaces.

    Returns (R, diagnostics).  R columns are x_l, y_l, z_l in the rig frame,
    with z_l oriented toward the scanned workspace.

    Raises:
        NonOrthogonalAxesError: extracted axes deviate from orthogonal by
            more than the tolerance before projection.
    """
    tol = tol or Tolerances()
    session.validate()
    obs_a = session.of_kind("axis_a")
    obs_b = session.of_kind("axis_b")
    pts_a = np.array([triangulate_observation(session, o, tol) for o in obs_a])
    pts_b = np.array([triangulate_observation(session, o, tol) for o in obs_b])
    surf_a = fit_quadratic_surface(pts_a, tol=tol)  # swept by x-axis scan
    surf_b = fit_quadratic_surface(pts_b, tol=tol)  # swept by y-axis scan
    axis = intersect_surfaces_axis(surf_a, surf_b, tol=tol)

    centroid = np.vstack([pts_a, pts_b]).mean(axis=0)
    z = axis.direction
    if float(z @ (centroid - rig_origin(session.rig))) < 0:
        z = -z

    # Tangent-plane normals at the shared axis: the y-scan surface contains
    # y_l and z_l, so its normal is +-x_l; symmetrically for the x-scan.
    x_raw = tangent_plane(surf_b, axis.point).normal
    y_raw = tangent_plane(surf_a, axis.point).normal
    x_raw = _orient_by_drive(x_raw, obs_a, pts_a, component=0)
    y_raw = _orient_by_drive(y_raw, obs_b, pts_b, component=1)

    dots = (abs(float(x_raw @ y_raw)), abs(float(x_raw @ z)),
            abs(float(y_raw @ z)))
    if max(dots) > tol.orthogonality_max_dot:
        raise NonOrthogonalAxesError(
            f"axis triad is not orthogonal (dots {dots})")
    r = nearest_rotation(np.column_stack([x_raw, y_raw, z]))
    diag = {
        "surface_rms_a_m": surf_a.rms,
        "surface_rms_b_m": surf_b.rms,
        "axis_rms_m": axis.rms,
        "max_axis_dot": max(dots),
    }
    return r, diag


def _orient_by_drive(axis_dir: Vec3, obs: list[Observation], pts: np.ndarray,
                     component: int) -> Vec3:
    """Flip an extracted axis so increasing drive moves hits along +axis."""
    d = np.array([o.drive[component] for o in obs])
    hi = pts[d > 0].mean(axis=0)
    lo = pts[d < 0].mean(axis=0)
    return axis_dir if float(axis_dir @ (hi - lo)) > 0 else -axis_dir


def recover_translation(session: CalibrationSession,
                        rotation: np.ndarray | None = None,
                        tol: Tolerances | None = None):
    """Stage-2b: device origin from the virtual-beam bundle.

    Axis-scan points grouped by drive value lie on one line per drive; all
    lines pass through the steering origin.  Returns (T, diagnostics).

    Raises:
        TooFewGroupsError: fewer than two drive groups with >= 2 points.
    """
    tol = tol or Tolerances()
    session.validate()
    groups: dict[tuple, list[Vec3]] = {}
    for o in session.of_kind("axis_a", "axis_b"):
        key = (o.kind, round(o.drive[0], 12), round(o.drive[1], 12))
        groups.setdefault(key, []).append(
            triangulate_observation(session, o, tol))
    lines: list[Ray3] = []
    rms_sum = 0.0
    for pts in groups.values():
        if len(pts) < tol.min_line_groups:
            continue
        f = fit_line(np.array(pts))
        lines.append(Ray3(f.point, f.direction))
        rms_sum += f.rms
    if len(lines) < 2:
        raise TooFewGroupsError(
            "need at least two drive groups spanning multiple board positions")
    t = nearest_point_to_lines(lines, tol)
    dists = [np.linalg.norm(np.cross(t - ln.origin, ln.direction))
             for ln in lines]
    diag = {
        "n_lines": len(lines),
        "line_rms_m": rms_sum / len(lines),
        "mean_line_miss_m": float(np.mean(dists)),
    }
    return t, diag


@dataclass
class MappingModel:
    """Two degree-2 bivariate polynomials mapping angles to drive."""

    m_a: np.ndarray  # 3x3, m_a[i, j] multiplies alpha^i beta^j
    m_b: np.ndarray
    fit_residual_rms: float

    def evaluate(self, alpha: float, beta: float) -> tuple[float, float]:
        pa = np.array([1.0, alpha, alpha * alpha])
        pb = np.array([1.0, beta, beta * beta])
        return float(pa @ self.m_a @ pb), float(pa @ self.m_b @ pb)


def device_frame_angles(pose: SteeringPose, point: Vec3) -> tuple[float, float]:
    """(alpha, beta) of a rig-frame point as seen from the device.

    Raises:
        BehindDeviceError: point is not in front of the device (+z_l side).
    """
    d = pose.rotation.T @ (np.asarray(point, dtype=float) - pose.translation)
    if d[2] <= 0:
        raise BehindDeviceError("target is behind the steering device")
    d = unit(d)
    return float(np.arctan2(d[0], d[2])), float(np.arctan2(d[1], d[2]))


def fit_mapping(session: CalibrationSession, pose: SteeringPose,
                tol: Tolerances | None = None) -> MappingModel:
    """Stage 3: regress drive against the 9 angle monomials.

    Raises:
        RankDeficientError: spiral does not span both axes (design matrix
            rank < 9).
    """
    tol = tol or Tolerances()
    spiral = session.of_kind("spiral")
    if len(spiral) < 9:
        raise UnderdeterminedError("spiral scan needs at least 9 samples")
    angles = []
    for o in spiral:
        p = triangulate_observation(session, o, tol)
        angles.append(device_frame_angles(pose, p))
    a_pow = np.array([[al ** i for i, _ in MONOMIAL_POWERS] for al, _ in angles])
    b_pow = np.array([[be ** j for _, j in MONOMIAL_POWERS] for _, be in angles])
    design = a_pow * b_pow
    rank = np.linalg.matrix_rank(design)
    if rank < 9:
        raise RankDeficientError(
            f"spiral spans rank {rank} < 9; sweep both axes")
    targets = np.array([o.drive for o in spiral])
    coef, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
    resid = design @ coef - targets
    rms = float(np.sqrt(np.mean(resid ** 2)))
    return MappingModel(m_a=coef[:, 0].reshape(3, 3),
                        m_b=coef[:, 1].reshape(3, 3),
                        fit_residual_rms=rms)


@dataclass
class SteeringCalibration:
    pose: SteeringPose
    mapping: MappingModel
    diagnostics: dict = field(default_factory=dict)


def calibrate(session: CalibrationSession,
              tol: Tolerances | None = None) -> SteeringCalibration:
    """Run stages 2-3 and bundle the result with per-stage residuals."""
    tol = tol or Tolerances()
    r, diag_r = recover_rotation(session, tol)
    t, diag_t = recover_translation(session, r, tol)
    pose = SteeringPose(rotation=r, translation=t)
    mapping = fit_mapping(session, pose, tol)
    diag = {**diag_r, **diag_t, "mapping_rms_drive": mapping.fit_residual_rms}
    return SteeringCalibration(pose=pose, mapping=mapping, diagnostics=diag)


def steer_to_point(calib: SteeringCalibration, target: Vec3) -> tuple[float, float]:
    """Drive signal that aims the beam at a rig-frame target.

    Raises:
        BehindDeviceError: target not in front of the device.
        DriveOutOfRangeError: mapped drive falls outside [-1, 1]^2.
    """
    alpha, beta = device_frame_angles(calib.pose, target)
    a, b = calib.mapping.evaluate(alpha, beta)
    if not (-1.0 <= a <= 1.0 and -1.0 <= b <= 1.0):
        raise DriveOutOfRangeError(
            f"target needs drive ({a:.3f}, {b:.3f}) outside [-1, 1]^2")
    return a, b


# ---------------------------------------------------------------------------
# Serialization


def _camera_dict(c: Camera) -> dict:
    return {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
            "width": c.width, "height": c.height,
            "rotation": [float(x) for x in c.rotation.ravel()],
            "center": [float(x) for x in c.center]}


def _camera_from(d: dict) -> Camera:
    return Camera(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                  width=d["width"], height=d["height"],
                  rotation=np.array(d["rotation"], dtype=float).reshape(3, 3),
                  center=np.array(d["center"], dtype=float))


def save_session(session: CalibrationSession, path) -> None:
    """JSON-lines recording: a rig header line, then one observation per line."""
    with open(path, "w") as fh:
        fh.write(json.dumps({
            "kind": "rig", "schemaVersion": SESSION_SCHEMA_VERSION,
            "left": _camera_dict(session.rig.left),
            "right": _camera_dict(session.rig.right),
        }) + "\n")
        for o in session.observations:
            fh.write(json.dumps({
                "kind": o.kind, "board": o.board,
                "drive": [float(o.drive[0]), float(o.drive[1])],
                "pixelL": [float(o.pixel_left[0]), float(o.pixel_left[1])],
                "pixelR": [float(o.pixel_right[0]), float(o.pixel_right[1])],
            }) + "\n")


def load_session(path) -> CalibrationSession:
    rig = None
    obs: list[Observation] = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if d["kind"] == "rig":
                rig = StereoRig(left=_camera_from(d["left"]),
                                right=_camera_from(d["right"]))
            else:
                obs.append(Observation(
                    kind=d["kind"], board=d["board"],
                    drive=tuple(d["drive"]),
                    pixel_left=tuple(d["pixelL"]),
                    pixel_right=tuple(d["pixelR"])))
    if rig is None:
        raise ValueError("session file has no rig header line")
    return CalibrationSession(rig=rig, observations=obs)


def save_calibration(calib: SteeringCalibration, path) -> None:
    data = {
        "schemaVersion": CALIBRATION_SCHEMA_VERSION,
        "R": [float(x) for x in calib.pose.rotation.ravel()],
        "T": [float(x) for x in calib.pose.translation],
        "mA": [float(x) for x in calib.mapping.m_a.ravel()],
        "mB": [float(x) for x in calib.mapping.m_b.ravel()],
        "residuals": {k: (float(v) if isinstance(v, (int, float)) else v)
                      for k, v in calib.diagnostics.items()},
    }
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def load_calibration(path) -> SteeringCalibration:
    d = json.loads(Path(path).read_text())
    if d.get("schemaVersion") != CALIBRATION_SCHEMA_VERSION:
        raise ValueError(f"unsupported calibration schema {d.get('schemaVersion')}")
    pose = SteeringPose(
        rotation=np.array(d["R"], dtype=float).reshape(3, 3),
        translation=np.array(d["T"], dtype=float))
    mapping = MappingModel(
        m_a=np.array(d["mA"], dtype=float).reshape(3, 3),
        m_b=np.array(d["mB"], dtype=float).reshape(3, 3),
        fit_residual_rms=float(d["residuals"].get("mapping_rms_drive", 0.0)))
    return SteeringCalibration(pose=pose, mapping=mapping,
                               diagnostics=d["residuals"])
