"""Virtual rig checks: radiometry closed forms, the steering drive map, slew
dynamics, scan boards, and the synthetic renderer.

Radiometric values are checked against hand-computed products and against
quadrature (the gaussian profile must integrate back to the delivered power).
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from beamlink.config import BeamConfig, DeviceConfig, SimConfig
from beamlink.errors import (
    BeamMissesBoardError,
    DegenerateInputError,
    DriveOutOfRangeError,
)
from beamlink.geometry import Ray3, unit, vec3
from beamlink.optics import (
    ScanBoard,
    SimScene,
    SteeringDevice,
    angles_to_direction,
    chain_throughput,
    delivered_power_mw,
    device_pose,
    direction_to_angles,
    irradiance_at,
    irradiance_on_ray,
    make_board,
    make_rig,
    render_spot_pair,
    render_stereo_pair,
    scan_sequence,
    spot_radius_m,
    write_pgm,
)

DEFAULT_CHAIN = (0.998, 0.96, 0.95)


def default_device() -> SteeringDevice:
    return SteeringDevice(DeviceConfig())


def axial_device() -> SteeringDevice:
    """Device at the origin firing straight down +z (identity pose)."""
    cfg = DeviceConfig(pose_rotvec=(0.0, 0.0, 0.0),
                      pose_translation_m=(0.0, 0.0, 0.0))
    return SteeringDevice(cfg)


# --- radiometry -----------------------------------------------------------


def test_chain_throughput_product():
    expected = 0.998 * 0.96 * 0.95
    assert chain_throughput(DEFAULT_CHAIN) == pytest.approx(expected, rel=1e-12)
    assert chain_throughput([]) == 1.0
    assert chain_throughput([0.5]) == 0.5


def test_chain_loss_percent_matches_documented_value():
    loss_pct = (1.0 - chain_throughput(DEFAULT_CHAIN)) * 100.0
    assert loss_pct == pytest.approx(8.9824, abs=1e-4)


def test_chain_throughput_rejects_nonphysical_elements():
    with pytest.raises(DegenerateInputError):
        chain_throughput([0.9, 0.0])
    with pytest.raises(DegenerateInputError):
        chain_throughput([1.2])


def test_delivered_power_default_config():
    beam = BeamConfig()
    expected = 6.3 * 1000.0 * 0.090 * (0.998 * 0.96 * 0.95)
    assert delivered_power_mw(beam) == pytest.approx(expected, rel=1e-12)
    assert delivered_power_mw(beam) == pytest.approx(516.07, abs=0.01)


def test_spot_radius_linear_in_distance():
    beam = BeamConfig()
    at_ref = spot_radius_m(beam, beam.reference_distance_m)
    assert at_ref == pytest.approx(beam.spot_diameter_m / 2.0, rel=1e-12)
    further = spot_radius_m(beam, beam.reference_distance_m + 1.0)
    assert further - at_ref == pytest.approx(math.tan(beam.divergence_rad),
                                             rel=1e-9)
    # never collapses to zero, even absurdly close
    assert spot_radius_m(beam, -100.0) == 1e-6


def test_tophat_irradiance_on_axis_at_reference_distance():
    beam = BeamConfig()
    dev = axial_device()
    dev.settle()
    level = irradiance_at(beam, dev, vec3(0.0, 0.0, 1.3), vec3(0, 0, 1))
    w_cm = (beam.spot_diameter_m / 2.0) * 100.0
    expected = delivered_power_mw(beam) / (math.pi * w_cm ** 2)
    assert level == pytest.approx(expected, rel=1e-12)
    assert level == pytest.approx(114.08, abs=0.01)


def test_tophat_is_uniform_inside_and_zero_outside():
    beam = BeamConfig()
    dev = axial_device()
    dev.settle()
    w = spot_radius_m(beam, 1.3)
    on_axis = irradiance_at(beam, dev, vec3(0, 0, 1.3), vec3(0, 0, 1))
    inside = irradiance_at(beam, dev, vec3(0.9 * w, 0, 1.3), vec3(0, 0, 1))
    outside = irradiance_at(beam, dev, vec3(1.1 * w, 0, 1.3), vec3(0, 0, 1))
    assert inside == pytest.approx(on_axis, rel=1e-12)
    assert outside == 0.0


def test_gaussian_matches_tophat_on_axis_and_integrates_to_power():
    beam = replace(BeamConfig(), profile="gaussian")
    tophat = BeamConfig()
    dev = axial_device()
    dev.settle()
    g0 = irradiance_at(beam, dev, vec3(0, 0, 1.3), vec3(0, 0, 1))
    t0 = irradiance_at(tophat, dev, vec3(0, 0, 1.3), vec3(0, 0, 1))
    assert g0 == pytest.approx(t0, rel=1e-12)

    # integrate the radial profile: total power must come back out
    def ring_power(r_m: float) -> float:
        i = irradiance_at(beam, dev, vec3(r_m, 0, 1.3), vec3(0, 0, 1))
        return i * 2.0 * math.pi * (r_m * 100.0) * 100.0  # mW/cm^2 * cm * cm

    total, _ = quad(ring_power, 0.0, 0.2)
    assert total == pytest.approx(delivered_power_mw(beam), rel=1e-6)


def test_irradiance_projects_by_incidence_cosine():
    beam = BeamConfig()
    dev = axial_device()
    dev.settle()
    normal_on = irradiance_at(beam, dev, vec3(0, 0, 1.3), vec3(0, 0, 1))
    tilted = irradiance_at(beam, dev, vec3(0, 0, 1.3),
                           unit(vec3(math.sin(0.6), 0.0, math.cos(0.6))))
    assert tilted == pytest.approx(normal_on * math.cos(0.6), rel=1e-12)


def test_irradiance_zero_behind_the_beam():
    beam = BeamConfig()
    ray = Ray3(vec3(0, 0, 0), vec3(0, 0, 1))
    assert irradiance_on_ray(beam, ray, vec3(0, 0, -0.5), vec3(0, 0, 1)) == 0.0


# --- steering device ------------------------------------------------------


def test_drive_map_round_trip():
    dev = default_device()
    for a in np.linspace(-1.0, 1.0, 9):
        for b in np.linspace(-1.0, 1.0, 9):
            alpha, beta = dev.drive_to_angles(float(a), float(b))
            a2, b2 = dev.angles_to_drive(alpha, beta)
            assert a2 == pytest.approx(a, abs=1e-12)
            assert b2 == pytest.approx(b, abs=1e-12)


def test_drive_map_round_trip_with_cubic_term():
    dev = SteeringDevice(replace(DeviceConfig(), cubic_coupling=0.02))
    for a in np.linspace(-1.0, 1.0, 7):
        alpha, beta = dev.drive_to_angles(float(a), 0.3)
        a2, b2 = dev.angles_to_drive(alpha, beta)
        assert a2 == pytest.approx(a, abs=1e-12)
        assert b2 == pytest.approx(0.3, abs=1e-12)


def test_angles_direction_round_trip():
    rng = np.random.default_rng(31)
    for _ in range(50):
        alpha, beta = rng.uniform(-0.8, 0.8, size=2)
        d = angles_to_direction(alpha, beta)
        assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-12)
        a2, b2 = direction_to_angles(d)
        assert a2 == pytest.approx(alpha, abs=1e-12)
        assert b2 == pytest.approx(beta, abs=1e-12)


def test_command_rejects_out_of_range_drive():
    dev = default_device()
    with pytest.raises(DriveOutOfRangeError):
        dev.command((1.0001, 0.0))
    with pytest.raises(DriveOutOfRangeError):
        dev.command((0.0, -1.5))


def test_optical_limit_clamps_target():
    cfg = replace(DeviceConfig(), gain_rad=1.2)  # full drive overshoots limit
    dev = SteeringDevice(cfg)
    dev.command((1.0, 0.0))
    dev.settle()
    assert dev.alpha == pytest.approx(cfg.optical_limit_rad, rel=1e-12)


def test_small_step_follows_first_order_lag():
    dev = default_device()
    target = 1e-3
    a, _ = dev.angles_to_drive(target, 0.0)
    dev.command((a, 0.0))
    dt = 1e-4
    n = 40
    for _ in range(n):
        dev.step(dt)
    expected = dev._target[0] * (1.0 - math.exp(-n * dt / dev.tau_s))
    assert dev.alpha == pytest.approx(expected, rel=1e-9)


def test_large_step_is_rate_limited():
    dev = default_device()
    dev.command((1.0, 0.0))
    dt = 1e-4
    dev.step(dt)
    assert dev.alpha == pytest.approx(dev.cfg.max_rate_rad_s * dt, rel=1e-12)


def test_step_rejects_nonpositive_dt():
    dev = default_device()
    with pytest.raises(DegenerateInputError):
        dev.step(0.0)


def test_settle_reaches_target_exactly():
    dev = default_device()
    dev.command((0.2, -0.1))
    dev.settle()
    a, b = dev.angles_to_drive(dev.alpha, dev.beta)
    assert a == pytest.approx(0.2, abs=1e-12)
    assert b == pytest.approx(-0.1, abs=1e-12)


def test_ray_uses_device_pose():
    cfg = DeviceConfig()
    dev = SteeringDevice(cfg)
    dev.command((0.1, 0.05))
    dev.settle()
    ray = dev.ray()
    np.testing.assert_allclose(ray.origin, np.array(cfg.pose_translation_m))
    pose = device_pose(cfg)
    expected = pose.rotation @ angles_to_direction(dev.alpha, dev.beta)
    np.testing.assert_allclose(ray.direction, expected, atol=1e-12)


# --- scan boards ----------------------------------------------------------


def test_board_intersection_known_hit():
    board = make_board(1.0, 0.0, 0.9)
    ray = Ray3(vec3(0, 0, 0), unit(vec3(0.1, -0.2, 1.0)))
    hit = board.intersect(ray)
    assert hit[2] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(hit[:2], [0.1, -0.2], atol=1e-12)


def test_board_rejects_parallel_behind_and_off_edge():
    board = make_board(1.0, 0.0, 0.9)
    with pytest.raises(BeamMissesBoardError):
        board.intersect(Ray3(vec3(0, 0, 0), vec3(1, 0, 0)))  # parallel
    with pytest.raises(BeamMissesBoardError):
        board.intersect(Ray3(vec3(0, 0, 2.0), vec3(0, 0, 1)))  # behind
    with pytest.raises(BeamMissesBoardError):
        board.intersect(Ray3(vec3(0, 0, 0), unit(vec3(0.6, 0, 1.0))))  # off edge


def test_make_board_tilt_rotates_about_x():
    board = make_board(1.3, 30.0, 0.9)
    np.testing.assert_allclose(board.e1, vec3(1, 0, 0))
    assert float(board.e2 @ vec3(0, 1, 0)) == pytest.approx(math.cos(
        math.radians(30.0)), rel=1e-12)
    n = unit(board.normal)
    # normal stays orthogonal to both in-plane axes
    assert float(n @ board.e1) == pytest.approx(0.0, abs=1e-12)
    assert float(n @ board.e2) == pytest.approx(0.0, abs=1e-12)


def test_scan_sequence_pixels_match_projection(cfg):
    rig = make_rig(cfg.rig)
    dev = SteeringDevice(cfg.device)
    board = make_board(1.0, 0.0, 0.9)
    drives = [(a, b) for a in (-0.1, 0.0, 0.1) for b in (-0.1, 0.0, 0.1)]
    samples = scan_sequence(dev, rig, board, drives)
    assert len(samples) == len(drives)
    assert all(s.ok for s in samples)
    for s in samples:
        np.testing.assert_allclose(s.pixel_left, rig.left.project(s.hit),
                                   atol=1e-12)
        np.testing.assert_allclose(s.pixel_right, rig.right.project(s.hit),
                                   atol=1e-12)


def test_scan_sequence_flags_misses_without_failing(cfg):
    rig = make_rig(cfg.rig)
    dev = SteeringDevice(cfg.device)
    board = make_board(0.75, 0.0, 0.9)
    samples = scan_sequence(dev, rig, board, [(0.0, 0.0), (1.0, 0.0)])
    assert samples[0].ok
    assert not samples[1].ok  # beam lands far off the board
    assert samples[1].hit is None


# --- scene and renderer ---------------------------------------------------


def test_scene_target_point_and_probe_override(cfg):
    scene = SimScene(cfg.scene, robot_xy=(0.1, -0.2))
    np.testing.assert_allclose(scene.target_point(),
                               vec3(0.1, -0.2, cfg.scene.ground_depth_m))
    probe = SimScene(cfg.scene, probe_point=vec3(0, 0.3, 0.7))
    np.testing.assert_allclose(probe.target_point(), vec3(0, 0.3, 0.7))


def test_scene_testbed_bounds(cfg):
    half = cfg.scene.testbed_size_m / 2.0
    assert SimScene(cfg.scene, robot_xy=(half, -half)).in_testbed()
    assert not SimScene(cfg.scene, robot_xy=(half + 0.01, 0.0)).in_testbed()


def test_render_places_tag_at_projected_pixel(cfg):
    rig = make_rig(cfg.rig)
    scene = SimScene(cfg.scene, robot_xy=(0.05, -0.04))
    left, right = render_stereo_pair(scene, rig, cfg.rig, seed=3)
    target = scene.target_point()
    for img, cam in ((left, rig.left), (right, rig.right)):
        u, v = cam.project(target)
        vy, vx = np.unravel_index(np.argmax(img.pixels), img.pixels.shape)
        # the tag is an annulus; its brightest ring sits within the outer
        # radius of the projection
        r_px = cam.fx * cfg.scene.tag_outer_radius_m / target[2]
        assert math.hypot(vx - u, vy - v) <= r_px + 1.5


def test_render_filtered_imaging_suppresses_ambient(cfg):
    rig = make_rig(cfg.rig, decimation=5)
    filtered = SimScene(cfg.scene, robot_xy=(0.3, 0.3))
    unfiltered = SimScene(replace(cfg.scene, imaging="unfiltered"),
                          robot_xy=(0.3, 0.3))
    img_f, _ = render_stereo_pair(filtered, rig, cfg.rig, seed=4)
    img_u, _ = render_stereo_pair(unfiltered, rig, cfg.rig, seed=4)
    bg_f = float(np.median(img_f.pixels))
    bg_u = float(np.median(img_u.pixels))
    expected_u = cfg.scene.ambient_lux * cfg.rig.ambient_gain_dn_per_lux
    assert bg_u == pytest.approx(expected_u, abs=1.0)
    assert bg_f == pytest.approx(expected_u * cfg.rig.filter_ambient_transmission,
                                 abs=1.0)


def test_render_deterministic_per_seed(cfg):
    rig = make_rig(cfg.rig, decimation=5)
    scene = SimScene(cfg.scene)
    a1, b1 = render_stereo_pair(scene, rig, cfg.rig, seed=9)
    a2, b2 = render_stereo_pair(scene, rig, cfg.rig, seed=9)
    assert np.array_equal(a1.pixels, a2.pixels)
    assert np.array_equal(b1.pixels, b2.pixels)
    a3, _ = render_stereo_pair(scene, rig, cfg.rig, seed=10)
    assert not np.array_equal(a1.pixels, a3.pixels)


def test_render_spot_pair_places_gaussian(cfg):
    rig = make_rig(cfg.rig)
    spot = vec3(0.12, 0.05, 1.0)
    left, _ = render_spot_pair(spot, rig, cfg.rig, cfg.scene, seed=5)
    u, v = rig.left.project(spot)
    vy, vx = np.unravel_index(np.argmax(left.pixels), left.pixels.shape)
    assert math.hypot(vx - u, vy - v) <= 1.5


def test_write_pgm_header_and_payload(tmp_path, cfg):
    rig = make_rig(cfg.rig, decimation=5)
    scene = SimScene(cfg.scene)
    img, _ = render_stereo_pair(scene, rig, cfg.rig, seed=6)
    path = tmp_path / "view.pgm"
    write_pgm(path, img)
    blob = path.read_bytes()
    header = f"P5\n{img.width} {img.height}\n255\n".encode()
    assert blob.startswith(header)
    assert len(blob) == len(header) + img.width * img.height
