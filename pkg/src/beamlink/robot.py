"""Energy-harvesting differential-drive robot.

Locomotion is intermittent: the harvesting cell charges a storage capacitor;
when stored energy reaches the discharge threshold the motors run (both for
F, a single motor for L/R pivot turns) until energy falls to the stop
threshold.  The duty cycle that emerges from this hysteresis is
harvested-power / motor-power, so average speed is linear in harvested power
below the continuous-run point regardless of the threshold values.

Wheel speed, cell area, and harvest efficiencies are fitted anchors (see
config), not first-principles values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .config import ChannelConfig, RobotConfig
from .errors import UnknownSymbolError
from .fsk import decode_current_ma

COMMANDS = ("L", "R", "F")


@dataclass(frozen=True)
class RobotState:
    x_m: float = 0.0
    y_m: float = 0.0
    heading_rad: float = 0.0
    capacitor_mj: float = 3.0
    mode: str = "charging"  # "charging" | "discharging"
    last_command: str = "F"
    # Powered time left on the current turn; turns decoded while parked wait
    # here until the capacitor refills.  Infinite = hold until replaced.
    turn_budget_s: float = math.inf


def initial_state(cfg: RobotConfig, x_m: float = 0.0, y_m: float = 0.0,
                  heading_rad: float = 0.0) -> RobotState:
    return RobotState(x_m=x_m, y_m=y_m, heading_rad=heading_rad,
                      capacitor_mj=cfg.cap_initial_mj)


def harvest_power_mw(cfg: RobotConfig, irradiance_mw_cm2: float,
                     incidence_deg: float = 0.0,
                     efficiency: float | None = None) -> float:
    eff = cfg.harvest_efficiency_laser if efficiency is None else efficiency
    cos_t = max(math.cos(math.radians(incidence_deg)), 0.0)
    return irradiance_mw_cm2 * cfg.cell_area_cm2 * cos_t * eff


def decode_power_mw(cfg: RobotConfig, channel: ChannelConfig,
                    adc_rate_hz: float | None) -> float:
    if adc_rate_hz is None:
        return 0.0
    return decode_current_ma(adc_rate_hz, channel) * cfg.supply_voltage_v


def motor_power_mw(cfg: RobotConfig, state: RobotState) -> float:
    """Instantaneous motor draw: both motors straight, one motor turning."""
    if state.mode != "discharging":
        return 0.0
    return cfg.motor_power_mw if state.last_command == "F" \
        else cfg.motor_power_mw / 2.0


def total_current_ma(cfg: RobotConfig, channel: ChannelConfig,
                     adc_rate_hz: float | None) -> float:
    """Locomotion plus decode current (the published overhead bookkeeping)."""
    decode = 0.0 if adc_rate_hz is None else decode_current_ma(adc_rate_hz, channel)
    return cfg.locomotion_current_ma + decode


def harvest_step(state: RobotState, cfg: RobotConfig,
                 irradiance_mw_cm2: float, incidence_deg: float, dt_s: float,
                 decode_rate_hz: float | None = None,
                 channel: ChannelConfig | None = None,
                 efficiency: float | None = None) -> RobotState:
    """Advance the capacitor: harvest in, decode and motor draw out.

    Energy is clamped to [0, capacity]; all other bookkeeping is exact
    (harvested minus consumed), which the tests check to 1e-9 mJ.
    """
    if dt_s <= 0:
        raise ValueError("dt must be positive")
    p_in = harvest_power_mw(cfg, irradiance_mw_cm2, incidence_deg, efficiency)
    p_out = motor_power_mw(cfg, state)
    if decode_rate_hz is not None:
        p_out += decode_power_mw(cfg, channel or ChannelConfig(), decode_rate_hz)
    e = state.capacitor_mj + (p_in - p_out) * dt_s
    return replace(state, capacitor_mj=min(max(e, 0.0), cfg.cap_capacity_mj))


def apply_command(state: RobotState, symbol: str,
                  hold_s: float = math.inf) -> RobotState:
    """Latch a steering command; it persists until the next one.

    ``hold_s`` bounds how much powered execution time a turn gets before the
    robot falls back to driving straight (the command link grants one symbol
    slot per decoded turn).

    Raises:
        UnknownSymbolError: symbol outside L/R/F.
    """
    if symbol not in COMMANDS:
        raise UnknownSymbolError(f"unknown robot command {symbol!r}")
    return replace(state, last_command=symbol, turn_budget_s=hold_s)


def motion_step(state: RobotState, cfg: RobotConfig, dt_s: float) -> RobotState:
    """Hysteresis mode transitions plus exact kinematic integration over dt.

    F drives both wheels (straight line); L stops the left wheel and drives
    the right (CCW pivot about the left wheel); R mirrors it.
    """
    if dt_s <= 0:
        raise ValueError("dt must be positive")
    mode = state.mode
    if mode == "charging" and state.capacitor_mj >= cfg.cap_start_mj:
        mode = "discharging"
    elif mode == "discharging" and state.capacitor_mj < cfg.cap_stop_mj:
        mode = "charging"
    if mode != state.mode:
        state = replace(state, mode=mode)
    if mode != "discharging":
        return state
    if state.last_command == "F":
        return _forward(state, cfg, dt_s)
    spin = min(dt_s, state.turn_budget_s)
    if spin > 0.0:
        state = replace(_pivot(state, cfg, spin),
                        turn_budget_s=state.turn_budget_s - spin)
    if state.turn_budget_s <= 1e-12:
        state = replace(state, last_command="F", turn_budget_s=math.inf)
        if dt_s > spin:
            state = _forward(state, cfg, dt_s - spin)
    return state


def _forward(state: RobotState, cfg: RobotConfig, dt_s: float) -> RobotState:
    v, h = cfg.wheel_speed_m_s, state.heading_rad
    return replace(state,
                   x_m=state.x_m + v * dt_s * math.cos(h),
                   y_m=state.y_m + v * dt_s * math.sin(h))


def _pivot(state: RobotState, cfg: RobotConfig, dt_s: float) -> RobotState:
    # pivot about the stopped wheel; the driven wheel traces an arc
    h = state.heading_rad
    turn = 1.0 if state.last_command == "L" else -1.0
    omega = turn * cfg.wheel_speed_m_s / cfg.wheel_base_m
    half = cfg.wheel_base_m / 2.0
    # stopped wheel sits half a wheel base to the turn side of center
    px = state.x_m + turn * half * -math.sin(h)
    py = state.y_m + turn * half * math.cos(h)
    dth = omega * dt_s
    c, s = math.cos(dth), math.sin(dth)
    rx, ry = state.x_m - px, state.y_m - py
    return replace(state,
                   x_m=px + c * rx - s * ry,
                   y_m=py + s * rx + c * ry,
                   heading_rad=h + dth)


def steady_speed_m_s(cfg: RobotConfig, irradiance_mw_cm2: float,
                     incidence_deg: float = 0.0,
                     decode_rate_hz: float | None = None,
                     channel: ChannelConfig | None = None,
                     efficiency: float | None = None) -> float:
    """Closed-form long-run average straight-line speed (duty * wheel speed)."""
    p_in = harvest_power_mw(cfg, irradiance_mw_cm2, incidence_deg, efficiency)
    p_dec = decode_power_mw(cfg, channel or ChannelConfig(), decode_rate_hz) \
        if decode_rate_hz is not None else 0.0
    duty = (p_in - p_dec) / cfg.motor_power_mw
    return cfg.wheel_speed_m_s * min(max(duty, 0.0), 1.0)
