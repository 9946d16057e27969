"""Fixed-dt closed-loop engine.

One global tick (default 1/1200 s) drives component schedulers: the camera
samples at 60 Hz, steering commands latch at the mirror's 300 Hz after the
processing latency, the receiver ADC runs at 100 Hz, and the robot and
channel advance every tick.  All periods are integer tick multiples, so the
loop is exactly periodic and bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..calibration import SteeringCalibration, steer_to_point
from ..config import SimConfig
from ..errors import (
    BehindDeviceError,
    DriveOutOfRangeError,
    NoBlobsError,
    TrackingLostError,
)
from ..fsk import (
    HighPassStream,
    StreamingDecoder,
    SymbolAlphabet,
    angular_gain_db,
    quantize,
    receiver_vpp_mv,
)
from ..optics import (
    SimScene,
    build_device,
    irradiance_on_ray,
    make_rig,
    render_stereo_pair,
)
from ..robot import apply_command, harvest_step, initial_state, motion_step
from ..tracking import detect_blobs, histogram256, otsu_threshold, select_target
from ..geometry import triangulate, vec3

CSV_HEADER = ("t,x_m,y_m,heading_rad,beam_x_m,beam_y_m,"
              "irradiance_mw_cm2,cap_mj,tx,rx,snr_db")


@dataclass
class RunLog:
    """Per-tick record of a loop run plus out-of-band events."""

    rows: list[tuple] = field(default_factory=list)
    events: list[tuple[float, str]] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in self.rows:
                fh.write(",".join(_cell(v) for v in r) + "\n")

    def to_jsonl(self, path) -> None:
        keys = CSV_HEADER.split(",")
        with open(path, "w") as fh:
            for r in self.rows:
                fh.write(json.dumps(
                    {k: (None if isinstance(v, float) and not math.isfinite(v)
                         else v) for k, v in zip(keys, r)}) + "\n")

    def column(self, name: str) -> list:
        idx = CSV_HEADER.split(",").index(name)
        return [r[idx] for r in self.rows]


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class SimulationEngine:
    """Owns all mutable loop state; see module docstring for the schedule.

    Single simulation task per engine; observers should only read snapshots.

    Args:
        observation: "render" runs the full vision stack on synthesized
            frames; "exact" feeds the true target position to the steering
            path (radiometry-only studies where tracker noise is not the
            subject).
        decode_rate_hz: receiver ADC rate, or None to disable decoding
            (no decode power draw, no rx symbols).
    """

    def __init__(self, cfg: SimConfig, calib: SteeringCalibration,
                 scene: SimScene | None = None, seed: int | None = None,
                 observation: str = "render",
                 decode_rate_hz: float | None = None,
                 locomotion: bool = True):
        if observation not in ("render", "exact"):
            raise ValueError(f"unknown observation mode {observation!r}")
        self.cfg = cfg
        self.calib = calib
        self.device = build_device(cfg)
        self.rig = make_rig(cfg.rig, cfg.loop.render_decimation)
        self.scene = scene or SimScene(cfg.scene)
        self.robot = initial_state(cfg.robot, self.scene.robot_xy[0],
                                   self.scene.robot_xy[1],
                                   self.scene.heading_rad)
        self.observation = observation
        self.locomotion = locomotion
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)

        lp = cfg.loop
        self.dt = lp.dt_s
        self.camera_ticks = max(1, round(1.0 / (lp.camera_rate_hz * self.dt)))
        self.mirror_ticks = max(1, round(1.0 / (lp.mirror_rate_hz * self.dt)))
        self.latency_s = lp.processing_latency_s

        ch = cfg.channel
        self.alphabet = SymbolAlphabet.lrf(ch)
        self.decode_rate = decode_rate_hz
        self.adc_ticks = max(1, round(1.0 / (ch.adc_rate_hz * self.dt)))
        self.slot_ticks = max(1, round(ch.symbol_duration_s / self.dt))
        self.hpf = HighPassStream(ch, 1.0 / self.dt)
        self.decoder = StreamingDecoder(ch, self.alphabet, ch.adc_rate_hz) \
            if decode_rate_hz is not None else None
        self.noise_sigma_mv = ch.noise_floor_mv / 10.0

        self.tick = 0
        self.tx_symbol = "F"
        self.rx_symbol = ""
        self._pending_rx: str | None = None
        self.slot_index = -1
        self.collided = False
        self.pending: deque[tuple[float, tuple[float, float]]] = deque()
        self.command_queue: deque[str] = deque()
        self.acks: list[tuple[int, str]] = []
        self.command_source = None
        self._predicted = [None, None]  # last centroid per camera
        self._last_fix_t = 0.0
        self._irr = 0.0
        self._snr_db = -math.inf
        self._beam_xy = (math.nan, math.nan)
        self._mult = 1.0
        self._incidence_deg = 0.0
        self.log = RunLog()

    # -- commands ----------------------------------------------------------

    def push_command(self, symbol: str) -> int:
        """Queue a steering command; returns the slot it will occupy."""
        if symbol not in self.alphabet.frequencies:
            raise KeyError(f"unknown command {symbol!r}")
        self.command_queue.append(symbol)
        return self.slot_index + len(self.command_queue)

    # -- observation -------------------------------------------------------

    def _observe(self, t: float):
        self.scene.robot_xy = (self.robot.x_m, self.robot.y_m)
        self.scene.heading_rad = self.robot.heading_rad
        if self.observation == "exact":
            self._last_fix_t = t
            return self.scene.target_point()
        frame_seed = int(self.rng.integers(0, 2 ** 31))
        left, right = render_stereo_pair(self.scene, self.rig, self.cfg.rig,
                                         seed=frame_seed)
        px = []
        for i, img in enumerate((left, right)):
            try:
                blob = select_target(
                    detect_blobs(img, otsu_threshold(histogram256(img)),
                                 self.cfg.tracker),
                    self._predicted[i])
            except NoBlobsError:
                px.append(None)
                continue
            self._predicted[i] = blob.centroid
            px.append(blob.centroid)
        if px[0] is None or px[1] is None:
            self.log.events.append((t, "tracking miss"))
            if t - self._last_fix_t > self.cfg.loop.tracking_timeout_s:
                raise TrackingLostError(
                    f"no tag for {t - self._last_fix_t:.2f} s")
            return None
        self._last_fix_t = t
        return triangulate(self.rig, px[0], px[1], self.cfg.tol)

    # -- main loop ---------------------------------------------------------

    def advance(self, duration_s: float) -> None:
        n = round(duration_s / self.dt)
        for _ in range(n):
            self._step_tick()

    def run(self, duration_s: float, commands=None) -> RunLog:
        """Run for the given sim time; ``commands`` is a per-slot symbol list
        or a callable(engine) -> symbol polled at each slot boundary."""
        if isinstance(commands, (list, tuple)):
            self.command_queue.extend(commands)
        elif callable(commands):
            self.command_source = commands
        self.advance(duration_s)
        return self.log

    def _step_tick(self) -> None:
        t = self.tick * self.dt
        cfg = self.cfg

        # symbol slot latch; completed decodes publish here so rx never
        # precedes its slot's end
        if self.tick % self.slot_ticks == 0:
            if self._pending_rx is not None:
                self.rx_symbol = self._pending_rx
                if self._pending_rx != self.alphabet.idle():
                    # one slot of powered execution per decoded turn; parked
                    # robots run it once the capacitor refills
                    self.robot = apply_command(self.robot, self._pending_rx,
                                               self.slot_ticks * self.dt)
                elif self.robot.turn_budget_s <= 0.0 \
                        or not math.isfinite(self.robot.turn_budget_s) \
                        or self.robot.last_command == "F":
                    self.robot = apply_command(self.robot, self._pending_rx)
                self._pending_rx = None
            self.slot_index += 1
            if self.command_queue:
                self.tx_symbol = self.command_queue.popleft()
                self.acks.append((self.slot_index, self.tx_symbol))
            elif self.command_source is not None:
                self.tx_symbol = self.command_source(self)
            else:
                self.tx_symbol = self.alphabet.idle()

        # camera capture -> steering command after processing latency
        if self.tick % self.camera_ticks == 0:
            point = self._observe(t)
            if point is not None:
                try:
                    drive = steer_to_point(self.calib, point)
                    self.pending.append((t + self.latency_s, drive))
                except (DriveOutOfRangeError, BehindDeviceError) as e:
                    self.log.events.append((t, f"steer: {e}"))

        # mirror latch
        if self.tick % self.mirror_ticks == 0:
            latest = None
            while self.pending and self.pending[0][0] <= t:
                latest = self.pending.popleft()[1]
            if latest is not None:
                self.device.command(latest)
        self.device.step(self.dt)

        # beam radiometry at the robot cell (or the probe point, if one
        # overrides the robot)
        ray = self.device.ray()
        if self.scene.probe_point is not None:
            target = np.asarray(self.scene.probe_point, dtype=float)
        else:
            target = vec3(self.robot.x_m, self.robot.y_m,
                          cfg.scene.ground_depth_m)
        self._irr = irradiance_on_ray(cfg.beam, ray, target, vec3(0, 0, -1.0))
        dz = float(ray.direction[2])
        self._incidence_deg = math.degrees(math.acos(min(abs(dz), 1.0)))
        if dz > 1e-9:
            h = (cfg.scene.ground_depth_m - float(ray.origin[2])) / dz
            self._beam_xy = (float(ray.origin[0] + h * ray.direction[0]),
                             float(ray.origin[1] + h * ray.direction[1]))
        else:
            self._beam_xy = (math.nan, math.nan)

        # channel: modulate, AC-couple, sample, decode
        ch = cfg.channel
        f = self.alphabet.frequencies[self.tx_symbol]
        phase_t = (self.tick % self.slot_ticks) * self.dt
        self._mult = 1.0 if f == 0 or (phase_t * f) % 1.0 < 0.5 \
            else 1.0 - ch.modulation_depth
        gain = 10.0 ** (angular_gain_db(self._incidence_deg, ch) / 10.0)
        volts = ch.responsivity_mv_per_mw_cm2 * self._irr * gain * self._mult
        ac = self.hpf.push(volts)
        vpp = receiver_vpp_mv(self._irr, self._incidence_deg, ch)
        self._snr_db = 10.0 * math.log10(vpp / ch.noise_floor_mv) \
            if vpp > 0 else -math.inf
        if self.decoder is not None and self.tick % self.adc_ticks == 0:
            sample = ac + float(self.rng.normal(0.0, self.noise_sigma_mv))
            sample = float(quantize(np.array([sample]), ch.adc_bits,
                                    ch.adc_vref_mv)[0])
            symbol = self.decoder.push(sample)
            if symbol is not None:
                self._pending_rx = symbol

        # robot energy and motion
        self.robot = harvest_step(
            self.robot, cfg.robot, self._irr * self._mult, 0.0, self.dt,
            decode_rate_hz=self.decode_rate, channel=ch)
        if self.locomotion and not self.collided:
            self.robot = motion_step(self.robot, cfg.robot, self.dt)
            for ox, oy, orad in self.scene.obstacles:
                if math.hypot(self.robot.x_m - ox, self.robot.y_m - oy) \
                        <= cfg.robot.body_radius_m + orad:
                    self.collided = True
                    self.log.events.append((t, "collision"))
                    break

        if self.tick % cfg.loop.log_stride == 0:
            self.log.rows.append((
                t, self.robot.x_m, self.robot.y_m, self.robot.heading_rad,
                self._beam_xy[0], self._beam_xy[1], self._irr,
                self.robot.capacitor_mj, self.tx_symbol, self.rx_symbol,
                self._snr_db))
        self.tick += 1

    # -- observers ---------------------------------------------------------

    def snapshot(self) -> dict:
        snr = self._snr_db if math.isfinite(self._snr_db) else None
        return {
            "v": 1,
            "t": self.tick * self.dt,
            "robot": {"x": self.robot.x_m, "y": self.robot.y_m,
                      "heading": self.robot.heading_rad},
            "beam": {"x": _nan_none(self._beam_xy[0]),
                     "y": _nan_none(self._beam_xy[1])},
            "irradiance": self._irr,
            "rx": self.rx_symbol,
            "snrDb": snr,
            "tx": self.tx_symbol,
            "capMj": self.robot.capacitor_mj,
            "collision": self.collided,
            "slot": self.slot_index,
        }


def _nan_none(v: float):
    return None if math.isnan(v) else v
