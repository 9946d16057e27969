"""Optical FSK command link: encoder, channel model, sampler, decoder.

Signal chain: a symbol stream modulates the beam power (square-wave multiplier
per slot), the photodiode front end AC-couples the voltage through a single
RC high-pass, Gaussian noise is added, a slow ADC decimates and quantizes,
and the decoder recovers symbols from the timing of rising threshold
crossings (pulse edges).  Edges rather than sample maxima: the squares are
flat-topped at these sample rates, so "the peak" is not a well-defined
sample, but each rising edge is.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal, special

from .config import ChannelConfig
from .errors import (
    BadDurationError,
    BelowMinimumRateError,
    NyquistViolationError,
    UnknownSymbolError,
)

PRE_FEC_BER = 3.8e-3

# Peak-to-peak noise floor N spans +-5 sigma of the Gaussian, so sigma = N/10.
NOISE_PP_SIGMAS = 10.0


@dataclass(frozen=True)
class SymbolAlphabet:
    """Named symbol frequencies in Hz.  Frequency 0 means unmodulated."""

    frequencies: dict[str, float]

    def __post_init__(self):
        vals = list(self.frequencies.values())
        if len(set(vals)) != len(vals):
            raise ValueError("symbol frequencies must be distinct")
        if any(f < 0 for f in vals):
            raise ValueError("symbol frequencies must be nonnegative")

    @classmethod
    def lrf(cls, cfg: ChannelConfig) -> "SymbolAlphabet":
        return cls({"L": cfg.freq_left_hz, "R": cfg.freq_right_hz, "F": 0.0})

    @classmethod
    def lr(cls, cfg: ChannelConfig) -> "SymbolAlphabet":
        return cls({"L": cfg.freq_left_hz, "R": cfg.freq_right_hz})

    @property
    def max_frequency(self) -> float:
        return max(self.frequencies.values())

    def min_nonzero_period(self) -> float:
        nz = [f for f in self.frequencies.values() if f > 0]
        if not nz:
            raise ValueError("alphabet has no modulated symbols")
        return 1.0 / max(nz)

    def nearest(self, freq_hz: float) -> str:
        # ties toward the lower frequency
        return min(self.frequencies,
                   key=lambda s: (abs(self.frequencies[s] - freq_hz),
                                  self.frequencies[s]))

    def idle(self) -> str:
        """Symbol for 'nothing detected': unmodulated if present, else slowest."""
        for s, f in self.frequencies.items():
            if f == 0:
                return s
        return min(self.frequencies, key=self.frequencies.get)


@dataclass
class Waveform:
    sample_rate_hz: float
    samples: np.ndarray

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def encode(symbols: list[str], alphabet: SymbolAlphabet, symbol_duration_s: float,
           modulation_depth: float, sample_rate_hz: float) -> Waveform:
    """Power-multiplier waveform in [1 - depth, 1], one square burst per slot.

    Each slot starts at the high level.  Frequency-0 symbols hold exactly 1.0.

    Raises:
        BadDurationError: slot does not hold a whole number of periods of
            every modulated symbol.
        UnknownSymbolError: symbol not in the alphabet.
    """
    if symbol_duration_s <= 0:
        raise BadDurationError("symbol duration must be positive")
    for name, f in alphabet.frequencies.items():
        if f > 0:
            cycles = symbol_duration_s * f
            if abs(cycles - round(cycles)) > 1e-9:
                raise BadDurationError(
                    f"slot of {symbol_duration_s} s holds {cycles} periods of "
                    f"{name} ({f} Hz); must be an integer")
    n_slot = round(symbol_duration_s * sample_rate_hz)
    t = np.arange(n_slot) / sample_rate_hz
    low = 1.0 - modulation_depth
    out = np.empty(len(symbols) * n_slot)
    for k, sym in enumerate(symbols):
        if sym not in alphabet.frequencies:
            raise UnknownSymbolError(f"symbol {sym!r} not in alphabet")
        f = alphabet.frequencies[sym]
        if f == 0:
            out[k * n_slot:(k + 1) * n_slot] = 1.0
        else:
            phase = (t * f) % 1.0
            out[k * n_slot:(k + 1) * n_slot] = np.where(phase < 0.5, 1.0, low)
    return Waveform(sample_rate_hz, out)


def rc_time_constant_s(cfg: ChannelConfig) -> float:
    return cfg.hp_resistance_ohm * cfg.hp_capacitance_f


def rc_corner_hz(cfg: ChannelConfig) -> float:
    return 1.0 / (2.0 * math.pi * rc_time_constant_s(cfg))


def hp_coefficients(cfg: ChannelConfig, sample_rate_hz: float) -> tuple[float, float]:
    """(c, d) of y[n] = c*(x[n] - x[n-1]) + d*y[n-1], bilinear CR high-pass."""
    k = 2.0 * sample_rate_hz
    wc = 1.0 / rc_time_constant_s(cfg)
    return k / (k + wc), (k - wc) / (k + wc)


def hp_filter(x: np.ndarray, cfg: ChannelConfig, sample_rate_hz: float,
              settle_to: float | None = None) -> np.ndarray:
    """AC-couple ``x``.  With ``settle_to`` the capacitor starts charged to
    that level (e.g. the running carrier mean), so a captured window does not
    open on a charging transient; None starts from a cold filter."""
    c, d = hp_coefficients(cfg, sample_rate_hz)
    b, a = [c, -c], [1.0, -d]
    if settle_to is None:
        return signal.lfilter(b, a, x)
    zi = signal.lfiltic(b, a, y=[0.0], x=[settle_to])
    y, _ = signal.lfilter(b, a, x, zi=zi)
    return y


class HighPassStream:
    """Sample-at-a-time form of :func:`hp_filter` for the control loop."""

    def __init__(self, cfg: ChannelConfig, sample_rate_hz: float):
        self._c, self._d = hp_coefficients(cfg, sample_rate_hz)
        self._x_prev: float | None = None
        self._y_prev = 0.0

    def push(self, x: float) -> float:
        if self._x_prev is None:
            self._x_prev = x  # precharged: no step at power-on
        y = self._c * (x - self._x_prev) + self._d * self._y_prev
        self._x_prev = x
        self._y_prev = y
        return y


def angular_gain_db(theta_deg: float, cfg: ChannelConfig) -> float:
    """Receiver response vs incidence; -3 dB at the cutoff angle."""
    return -3.0 * (abs(theta_deg) / cfg.angular_cutoff_deg) ** cfg.angular_exponent


def receiver_vpp_mv(irradiance_mw_cm2: float, incidence_deg: float,
                    cfg: ChannelConfig) -> float:
    """Peak-to-peak photodiode swing for full-depth-to-low modulation."""
    gain = 10.0 ** (angular_gain_db(incidence_deg, cfg) / 10.0)
    return cfg.modulation_depth * cfg.responsivity_mv_per_mw_cm2 * \
        irradiance_mw_cm2 * gain


@dataclass(frozen=True)
class SnrMeasurement:
    vpp_mv: float
    noise_floor_mv: float

    @property
    def snr_db(self) -> float:
        if self.vpp_mv <= 0:
            return -math.inf
        return 10.0 * math.log10(self.vpp_mv / self.noise_floor_mv)


def _receiver_volts(tx: Waveform, scale_mv: float, noise_floor_mv: float,
                    cfg: ChannelConfig, rng: np.random.Generator) -> Waveform:
    volts = tx.samples * scale_mv
    settle = float(volts.mean()) if len(volts) else 0.0
    y = hp_filter(volts, cfg, tx.sample_rate_hz, settle_to=settle)
    sigma = noise_floor_mv / NOISE_PP_SIGMAS
    if sigma > 0:
        y = y + rng.normal(0.0, sigma, size=len(y))
    return Waveform(tx.sample_rate_hz, y)


def channelize(tx: Waveform, irradiance_mw_cm2: float, incidence_deg: float,
               cfg: ChannelConfig, seed: int = 0) -> Waveform:
    """Multiplier waveform -> noisy AC-coupled photodiode voltage in mV."""
    gain = 10.0 ** (angular_gain_db(incidence_deg, cfg) / 10.0)
    scale = cfg.responsivity_mv_per_mw_cm2 * irradiance_mw_cm2 * gain
    rng = np.random.default_rng(seed)
    return _receiver_volts(tx, scale, cfg.noise_floor_mv, cfg, rng)


def adc_sample(w: Waveform, adc_rate_hz: float, resolution_bits: int,
               vref_mv: float, alphabet: SymbolAlphabet | None = None) -> Waveform:
    """Nearest-sample decimation then mid-tread quantization to +-vref."""
    if alphabet is not None and 2.0 * alphabet.max_frequency > adc_rate_hz:
        raise NyquistViolationError(
            f"{alphabet.max_frequency} Hz needs an ADC rate above "
            f"{2 * alphabet.max_frequency} Hz, got {adc_rate_hz}")
    n_out = int(math.floor((len(w.samples) - 1) * adc_rate_hz / w.sample_rate_hz)) + 1
    src = np.clip(np.rint(np.arange(n_out) * w.sample_rate_hz / adc_rate_hz),
                  0, len(w.samples) - 1).astype(int)
    return Waveform(adc_rate_hz, quantize(w.samples[src], resolution_bits, vref_mv))


def quantize(x: np.ndarray, resolution_bits: int, vref_mv: float) -> np.ndarray:
    lsb = 2.0 * vref_mv / (2 ** resolution_bits)
    half = 2 ** (resolution_bits - 1)
    codes = np.clip(np.floor(x / lsb + 0.5), -half, half - 1)
    return codes * lsb


class _Comparator:
    """Schmitt trigger over the AC-coupled samples.

    An event fires each time the signal traverses the full hysteresis band
    [-threshold, +threshold]; consecutive events are therefore half a
    modulation period apart.  A debounce window (refractory) keeps plateau
    noise from double-firing, and the symmetric band makes the timer immune
    to the slow coupling tail that follows power or duty steps: the tail
    crosses the band at most once, while a live carrier keeps crossing it.
    """

    def __init__(self, threshold_mv: float, refractory_s: float):
        self.threshold = threshold_mv
        self.refractory = refractory_s
        self.state = 0  # +1 armed high, -1 armed low, 0 before first excursion
        self.last_event_t = -math.inf

    def push(self, t: float, x: float) -> bool:
        if x >= self.threshold:
            side = 1
        elif x <= -self.threshold:
            side = -1
        else:
            return False
        if side == self.state:
            return False
        if self.state == 0:
            self.state = side
            return False
        if t - self.last_event_t < self.refractory:
            return False
        self.state = side
        self.last_event_t = t
        return True


def _slot_symbol(events: list[float], alphabet: SymbolAlphabet) -> str:
    if len(events) < 2:
        return alphabet.idle()
    half_period = float(np.median(np.diff(events)))
    return alphabet.nearest(0.5 / half_period)


def decode_peak_timing(adc: Waveform, alphabet: SymbolAlphabet,
                       symbol_duration_s: float, peak_threshold_mv: float,
                       cfg: ChannelConfig | None = None) -> list[str]:
    """Symbols from event timing, no FFT: a hysteresis comparator fires on
    every band traversal, so per slot the median interval between events is
    half the modulation period and picks the nearest alphabet frequency.
    Fewer than two events reads as the idle symbol.

    Raises:
        NyquistViolationError: ADC rate below twice the fastest symbol.
    """
    cfg = cfg or ChannelConfig()
    if 2.0 * alphabet.max_frequency > adc.sample_rate_hz:
        raise NyquistViolationError(
            f"cannot time {alphabet.max_frequency} Hz from "
            f"{adc.sample_rate_hz} Hz samples")
    spc = round(symbol_duration_s * adc.sample_rate_hz)
    comp = _Comparator(peak_threshold_mv,
                       cfg.refractory_factor * alphabet.min_nonzero_period())
    out: list[str] = []
    events: list[float] = []
    for k in range(len(adc.samples) // spc):
        for i in range(k * spc, (k + 1) * spc):
            if comp.push(i / adc.sample_rate_hz, adc.samples[i]):
                events.append(comp.last_event_t)
        out.append(_slot_symbol(events, alphabet))
        events.clear()
    return out


def default_threshold_mv(cfg: ChannelConfig) -> float:
    return cfg.peak_threshold_factor * cfg.noise_floor_mv


class StreamingDecoder:
    """Slot-at-a-time decoder fed one ADC sample per push; yields a symbol at
    each slot boundary.  Decisions match :func:`decode_peak_timing` run on the
    same sample stream."""

    def __init__(self, cfg: ChannelConfig, alphabet: SymbolAlphabet,
                 adc_rate_hz: float, threshold_mv: float | None = None):
        if 2.0 * alphabet.max_frequency > adc_rate_hz:
            raise NyquistViolationError(
                f"ADC rate {adc_rate_hz} Hz below Nyquist for alphabet")
        self.alphabet = alphabet
        self.adc_rate_hz = adc_rate_hz
        self.threshold_mv = (default_threshold_mv(cfg)
                             if threshold_mv is None else threshold_mv)
        self._spc = round(cfg.symbol_duration_s * adc_rate_hz)
        self._comp = _Comparator(
            self.threshold_mv,
            cfg.refractory_factor * alphabet.min_nonzero_period())
        self._events: list[float] = []
        self._n = 0

    def push(self, sample_mv: float) -> str | None:
        if self._comp.push(self._n / self.adc_rate_hz, sample_mv):
            self._events.append(self._comp.last_event_t)
        self._n += 1
        if self._n % self._spc:
            return None
        sym = _slot_symbol(self._events, self.alphabet)
        self._events.clear()
        return sym


def decode_current_ma(adc_rate_hz: float, cfg: ChannelConfig) -> float:
    """Receiver supply current vs ADC rate, affine through the two published
    operating points: zero at the minimum usable rate, max at the reference."""
    if adc_rate_hz < cfg.min_decode_rate_hz:
        raise BelowMinimumRateError(
            f"{adc_rate_hz} Hz is below the {cfg.min_decode_rate_hz} Hz "
            "minimum decode rate")
    span = cfg.decode_current_ref_hz - cfg.min_decode_rate_hz
    return cfg.decode_current_max_ma * (adc_rate_hz - cfg.min_decode_rate_hz) / span


@dataclass
class BerResult:
    bits_sent: int
    bit_errors: int

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_sent if self.bits_sent else 0.0

    @property
    def pre_fec_pass(self) -> bool:
        return self.ber <= PRE_FEC_BER


@dataclass
class BerSweepResult:
    points: list[tuple[float, BerResult]]
    fit_mid_db: float
    fit_scale_db: float

    def fitted_ber(self, snr_db: float) -> float:
        # 0.25*erfc saturates at 0.5 for snr -> -inf: random guessing
        # between the two symbols, the correct floor for a binary link.
        return 0.25 * special.erfc((snr_db - self.fit_mid_db) / self.fit_scale_db)

    def crossing_db(self, level: float = PRE_FEC_BER) -> float:
        return self.fit_mid_db + self.fit_scale_db * special.erfcinv(4.0 * level)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["snr_db", "bits", "errors", "ber"])
            for snr, r in self.points:
                w.writerow([snr, r.bits_sent, r.bit_errors, f"{r.ber:.6g}"])


def ber_point(alphabet: SymbolAlphabet, snr_db: float, n_bits: int, seed: int,
              cfg: ChannelConfig) -> BerResult:
    """One Monte-Carlo BER measurement at a fixed SNR.

    The same seed draws the same symbols and the same noise at every SNR
    (common random numbers), so sweeps are smooth in the SNR axis and points
    can be evaluated in any order or in parallel.
    """
    names = sorted(alphabet.frequencies)
    if len(names) != 2:
        raise ValueError("BER is defined for a binary alphabet")
    rng = np.random.default_rng(seed)
    symbols = [names[i] for i in rng.integers(0, 2, size=n_bits)]
    tx = encode(symbols, alphabet, cfg.symbol_duration_s, cfg.modulation_depth,
                cfg.sample_rate_hz)
    vpp = 0.0 if snr_db == -math.inf else \
        cfg.noise_floor_mv * 10.0 ** (snr_db / 10.0)
    rx = _receiver_volts(tx, vpp / cfg.modulation_depth, cfg.noise_floor_mv,
                         cfg, rng)
    adc = adc_sample(rx, cfg.adc_rate_hz, cfg.adc_bits, cfg.adc_vref_mv,
                     alphabet)
    decoded = decode_peak_timing(adc, alphabet, cfg.symbol_duration_s,
                                 default_threshold_mv(cfg), cfg)
    errors = sum(1 for a, b in zip(symbols, decoded) if a != b)
    return BerResult(bits_sent=n_bits, bit_errors=errors)


def ber_sweep(alphabet: SymbolAlphabet, snr_points_db: list[float],
              n_bits_per_point: int, seed: int,
              cfg: ChannelConfig) -> BerSweepResult:
    points = [(snr, ber_point(alphabet, snr, n_bits_per_point, seed, cfg))
              for snr in snr_points_db]
    mid, scale = _fit_waterfall(points)
    return BerSweepResult(points=points, fit_mid_db=mid, fit_scale_db=scale)


def _fit_waterfall(points) -> tuple[float, float]:
    """Least-squares erfc fit through the finite-SNR points (diagnostic)."""
    xs = np.array([s for s, _ in points if math.isfinite(s)])
    ys = np.array([r.ber for s, r in points if math.isfinite(s)])
    if len(xs) < 3 or ys.max() <= 0:
        return 1.0, 0.8
    try:
        (mid, scale), _ = optimize.curve_fit(
            lambda x, m, s: 0.25 * special.erfc((x - m) / s),
            xs, ys, p0=(1.0, 0.8), bounds=([-20.0, 0.05], [20.0, 20.0]),
            maxfev=2000)
        return float(mid), float(scale)
    except RuntimeError:
        return 1.0, 0.8
