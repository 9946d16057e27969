"""Geometry core: rays, planes, quadratic surfaces, and stereo triangulation.

Conventions
-----------
* World frame = stereo rig frame: x right, y down-image, z away from the
  cameras (toward the workspace).  Cameras are pinhole, distortion free.
* A quadratic surface is a height field over a local base plane:
  ``h(u, v) = c00 + c10*u + c01*v + c20*u^2 + c11*u*v + c02*v^2`` with the
  world point ``origin + u*U + v*V + h*N``.
* Angles are radians, lengths meters, unless a name says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .config import Tolerances
from .errors import (
    DegenerateInputError,
    IllConditionedError,
    NoIntersectionError,
    OutOfBoundsError,
    ParallelBundleError,
    ParallelRaysError,
    UnderdeterminedError,
)

Vec3 = np.ndarray


def vec3(x: float, y: float, z: float) -> Vec3:
    return np.array([x, y, z], dtype=float)


def unit(v: Vec3) -> Vec3:
    """Normalize, rejecting near-zero input."""
    n = np.linalg.norm(v)
    if n < 1e-15:
        raise DegenerateInputError("cannot normalize a near-zero vector")
    return v / n


def rotvec_to_matrix(w: Vec3) -> np.ndarray:
    """Rodrigues formula; w is axis * angle."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    if theta < 1e-15:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * (kx @ kx)


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Orthogonal Procrustes projection of a 3x3 matrix onto SO(3)."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rotation_geodesic_rad(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic distance on SO(3) between two rotation matrices."""
    c = (np.trace(r1.T @ r2) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


@dataclass
class Ray3:
    origin: Vec3
    direction: Vec3  # unit

    def at(self, t: float) -> Vec3:
        return self.origin + t * self.direction


@dataclass
class Plane3:
    """Plane as ``normal . p = offset`` with a unit normal."""

    normal: Vec3
    offset: float

    def signed_distance(self, p: Vec3) -> float:
        return float(self.normal @ p - self.offset)


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # camera-to-world
    center: Vec3

    def pixel_in_bounds(self, px: tuple[float, float]) -> bool:
        u, v = px
        return -0.5 <= u <= self.width - 0.5 and -0.5 <= v <= self.height - 0.5

    def back_project(self, px: tuple[float, float]) -> Ray3:
        if not self.pixel_in_bounds(px):
            raise OutOfBoundsError(
                f"pixel {px} outside {self.width}x{self.height} image")
        u, v = px
        d_cam = np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])
        return Ray3(self.center.copy(), unit(self.rotation @ d_cam))

    def project(self, p: Vec3) -> tuple[float, float]:
        q = self.rotation.T @ (np.asarray(p, dtype=float) - self.center)
        if q[2] <= 0:
            raise OutOfBoundsError("point is behind the camera")
        return (self.fx * q[0] / q[2] + self.cx, self.fy * q[1] / q[2] + self.cy)


@dataclass
class StereoRig:
    left: Camera
    right: Camera


@dataclass
class SteeringPose:
    """Pose of the steering device in the rig frame.  Columns of ``rotation``
    are the device axes x_l, y_l, z_l; +z_l faces the workspace."""

    rotation: np.ndarray
    translation: Vec3


def triangulate(rig: StereoRig, px_left: tuple[float, float],
                px_right: tuple[float, float],
                tol: Tolerances | None = None) -> Vec3:
    """Triangulate a 3D point as the midpoint of the mutual perpendicular
    between the two back-projected rays.

    Raises:
        OutOfBoundsError: a pixel is off its image.
        ParallelRaysError: ray directions agree within the parallel tolerance.
    """
    tol = tol or Tolerances()
    r1 = rig.left.back_project(px_left)
    r2 = rig.right.back_project(px_right)
    return ray_midpoint(r1, r2, tol.parallel_rays_rad)


def ray_midpoint(r1: Ray3, r2: Ray3, parallel_rad: float = 1e-6) -> Vec3:
    n = np.cross(r1.direction, r2.direction)
    nn = float(n @ n)
    # |n| = sin(angle between rays); small-angle comparison is exact enough.
    if nn < parallel_rad * parallel_rad:
        raise ParallelRaysError("rays are parallel within tolerance")
    dov = r2.origin - r1.origin
    t1 = float(np.cross(dov, r2.direction) @ n) / nn
    t2 = float(np.cross(dov, r1.direction) @ n) / nn
    return 0.5 * (r1.at(t1) + r2.at(t2))


def fit_plane(points: np.ndarray) -> tuple[Plane3, float]:
    """Total-least-squares plane through >= 3 non-collinear points.

    Returns the plane and the RMS orthogonal distance.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 3:
        raise UnderdeterminedError("plane fit needs at least 3 points")
    centroid = pts.mean(axis=0)
    q = pts - centroid
    _, s, vt = np.linalg.svd(q, full_matrices=False)
    if s[1] < 1e-12 * max(s[0], 1e-30):
        raise UnderdeterminedError("points are collinear; plane is ambiguous")
    normal = vt[2]
    rms = float(np.sqrt(np.mean((q @ normal) ** 2)))
    return Plane3(normal, float(normal @ centroid)), rms


@dataclass
class SurfaceFrame:
    """Right-handed local frame of a base plane (columns U, V, N)."""

    origin: Vec3
    axes: np.ndarray  # 3x3, columns U, V, N

    @property
    def u(self) -> Vec3:
        return self.axes[:, 0]

    @property
    def v(self) -> Vec3:
        return self.axes[:, 1]

    @property
    def n(self) -> Vec3:
        return self.axes[:, 2]


@dataclass
class QuadraticSurface:
    """Degree-2 height field over a base plane.

    coeffs order: [c00, c10, c01, c20, c11, c02].
    """

    frame: SurfaceFrame
    coeffs: np.ndarray
    rms: float = 0.0
    u_bounds: tuple[float, float] = (0.0, 0.0)
    v_bounds: tuple[float, float] = (0.0, 0.0)
    n_points: int = 0

    def height(self, u, v):
        c = self.coeffs
        return c[0] + c[1] * u + c[2] * v + c[3] * u * u + c[4] * u * v + c[5] * v * v

    def point(self, u: float, v: float) -> Vec3:
        return (self.frame.origin + u * self.frame.u + v * self.frame.v
                + float(self.height(u, v)) * self.frame.n)

    def local_coords(self, p: Vec3) -> tuple[float, float, float]:
        q = np.asarray(p, dtype=float) - self.frame.origin
        return float(q @ self.frame.u), float(q @ self.frame.v), float(q @ self.frame.n)

    def gradient(self, u: float, v: float) -> tuple[float, float]:
        c = self.coeffs
        return (float(c[1] + 2 * c[3] * u + c[4] * v),
                float(c[2] + c[4] * u + 2 * c[5] * v))


def fit_quadratic_surface(points: np.ndarray,
                          frame: SurfaceFrame | None = None,
                          tol: Tolerances | None = None) -> QuadraticSurface:
    """Least-squares quadratic height field over a base plane.

    The base plane defaults to the total-least-squares plane of the points;
    pass ``frame`` to fit heights in a caller-chosen frame instead.

    Args:
        points: (n, 3) world points, n >= 6 and not rank deficient.
        frame: optional base frame to use instead of the best-fit plane.
        tol: numeric guards (minimum point count).

    Raises:
        UnderdeterminedError: fewer than the minimum points, or the design
            matrix loses rank (e.g. all points collinear).
    """
    tol = tol or Tolerances()
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DegenerateInputError("points must be an (n, 3) array")
    if pts.shape[0] < tol.surface_min_points:
        raise UnderdeterminedError(
            f"quadratic surface needs >= {tol.surface_min_points} points")
    if frame is None:
        plane, _ = fit_plane(pts)
        n = plane.normal
        # Any stable in-plane direction works for U; pick the world axis most
        # orthogonal to the normal.
        seed = np.eye(3)[int(np.argmin(np.abs(n)))]
        u = unit(np.cross(seed, n))
        v = np.cross(n, u)  # completes a right-handed (U, V, N) triple
        frame = SurfaceFrame(pts.mean(axis=0), np.column_stack([u, v, n]))
    q = pts - frame.origin
    uu = q @ frame.u
    vv = q @ frame.v
    hh = q @ frame.n
    a = np.column_stack([np.ones_like(uu), uu, vv, uu * uu, uu * vv, vv * vv])
    coeffs, _, rank, _ = np.linalg.lstsq(a, hh, rcond=None)
    if rank < 6:
        raise UnderdeterminedError("quadratic design matrix is rank deficient")
    rms = float(np.sqrt(np.mean((a @ coeffs - hh) ** 2)))
    return QuadraticSurface(
        frame=frame,
        coeffs=coeffs,
        rms=rms,
        u_bounds=(float(uu.min()), float(uu.max())),
        v_bounds=(float(vv.min()), float(vv.max())),
        n_points=int(pts.shape[0]),
    )


def tangent_plane(surface: QuadraticSurface, at: Vec3) -> Plane3:
    """Tangent plane of the height field at the point's (u, v) footprint.

    ``at`` is projected into the base frame; its height residual is ignored,
    so any point near the surface selects the tangency footprint.
    """
    u0, v0, _ = surface.local_coords(at)
    hu, hv = surface.gradient(u0, v0)
    f = surface.frame
    normal = unit(f.n - hu * f.u - hv * f.v)
    p0 = surface.point(u0, v0)
    return Plane3(normal, float(normal @ p0))


@dataclass
class SearchRegion:
    """(u, v) rectangle in a surface's base frame, with grid resolution."""

    u_range: tuple[float, float]
    v_range: tuple[float, float]
    grid: int = 64


@dataclass
class AxisFit:
    """Total-least-squares line through surface-intersection samples."""

    point: Vec3
    direction: Vec3  # unit
    rms: float
    samples: np.ndarray = field(repr=False, default=None)


def fit_line(points: np.ndarray) -> AxisFit:
    """Total-least-squares 3D line: centroid + principal direction.

    Raises:
        UnderdeterminedError: fewer than 2 points, or all points coincide.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
        raise UnderdeterminedError("line fit needs at least 2 points")
    centroid = pts.mean(axis=0)
    q = pts - centroid
    _, s, vt = np.linalg.svd(q, full_matrices=False)
    if s[0] < 1e-15:
        raise UnderdeterminedError("points coincide; line direction undefined")
    direction = vt[0]
    perp = q - np.outer(q @ direction, direction)
    rms = float(np.sqrt(np.mean(np.sum(perp ** 2, axis=1))))
    return AxisFit(centroid, direction, rms, pts)


def _surface_residual(surface: QuadraticSurface, p: Vec3) -> float:
    u, v, h = surface.local_coords(p)
    return h - float(surface.height(u, v))


def intersect_surfaces_axis(surf_a: QuadraticSurface,
                            surf_b: QuadraticSurface,
                            region: SearchRegion | None = None,
                            orient_toward: Vec3 | None = None,
                            tol: Tolerances | None = None) -> AxisFit:
    """Intersect two quadratic surfaces and fit a line to the curve.

    Marches a grid over ``surf_a``'s base frame, root-finds the sign changes
    of the signed residual against ``surf_b`` along grid edges, and fits a
    total-least-squares line through the crossing points.

    Args:
        region: search rectangle; defaults to ``surf_a``'s fitted bounds.
        orient_toward: if given, flip the direction so it points from the
            line toward this anchor (e.g. the device side rather than the
            scan boards).

    Raises:
        NoIntersectionError: no sign change inside the region.
        IllConditionedError: line fit RMS above ``tol.axis_rms_max_m``.
    """
    tol = tol or Tolerances()
    if region is None:
        region = SearchRegion(surf_a.u_bounds, surf_a.v_bounds, tol.axis_grid)
    g = region.grid
    us = np.linspace(region.u_range[0], region.u_range[1], g + 1)
    vs = np.linspace(region.v_range[0], region.v_range[1], g + 1)
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    f = surf_a.frame
    pts = (f.origin[None, None, :]
           + uu[..., None] * f.u + vv[..., None] * f.v
           + np.asarray(surf_a.height(uu, vv))[..., None] * f.n)
    fb = surf_b.frame
    q = pts - fb.origin
    ub = q @ fb.u
    vb = q @ fb.v
    hb = q @ fb.n
    res = hb - surf_b.height(ub, vb)

    def cross_on_edge(u0, v0, u1, v1) -> Vec3:
        def h(t: float) -> float:
            p = surf_a.point(u0 + t * (u1 - u0), v0 + t * (v1 - v0))
            return _surface_residual(surf_b, p)

        t = brentq(h, 0.0, 1.0, xtol=1e-12)
        return surf_a.point(u0 + t * (u1 - u0), v0 + t * (v1 - v0))

    samples = []
    sign = np.signbit(res)
    cross_u = sign[:-1, :] != sign[1:, :]
    cross_v = sign[:, :-1] != sign[:, 1:]
    for i, j in zip(*np.nonzero(cross_u)):
        samples.append(cross_on_edge(us[i], vs[j], us[i + 1], vs[j]))
    for i, j in zip(*np.nonzero(cross_v)):
        samples.append(cross_on_edge(us[i], vs[j], us[i], vs[j + 1]))
    if len(samples) < 2:
        raise NoIntersectionError("surfaces do not cross inside the region")
    pts = np.array(samples)
    centroid = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    direction = vt[0]
    perp = (pts - centroid) - np.outer((pts - centroid) @ direction, direction)
    rms = float(np.sqrt(np.mean(np.sum(perp ** 2, axis=1))))
    if rms > tol.axis_rms_max_m:
        raise IllConditionedError(
            f"intersection curve is not line-like (rms {rms:.3g} m)")
    if orient_toward is not None and (orient_toward - centroid) @ direction < 0:
        direction = -direction
    return AxisFit(centroid, direction, rms, pts)


def axis_from_plane_normal(normal: Vec3, z_axis: Vec3) -> Vec3:
    """In-plane axis orthogonal to ``z_axis``: ``unit(normal x z_axis)``.

    With the scan plane's normal and the z axis this yields the remaining
    device axis of that scan plane (e.g. n_xz x z_l = x_l up to sign; signs
    are fixed later against the drive direction).

    Raises:
        DegenerateInputError: normal parallel to the axis within 1e-9.
    """
    n = unit(np.asarray(normal, dtype=float))
    z = unit(np.asarray(z_axis, dtype=float))
    if abs(float(n @ z)) > 1.0 - 1e-9:
        raise DegenerateInputError("plane normal is parallel to the axis")
    return unit(np.cross(n, z))


def nearest_point_to_lines(lines: list[Ray3],
                           tol: Tolerances | None = None) -> Vec3:
    """Closed-form point minimizing the sum of squared line distances.

    Solves ``sum_i (I - d_i d_i^T) x = sum_i (I - d_i d_i^T) o_i``.

    Raises:
        ParallelBundleError: the normal matrix is singular within the
            relative tolerance (parallel or near-parallel bundle).
    """
    tol = tol or Tolerances()
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for ln in lines:
        d = unit(ln.direction)
        p = np.eye(3) - np.outer(d, d)
        a += p
        b += p @ ln.origin
    w = np.linalg.eigvalsh(a)
    if w[0] < tol.singular_rel * max(w[-1], 1.0):
        raise ParallelBundleError("line bundle has no unique intersection")
    return np.linalg.solve(a, b)
