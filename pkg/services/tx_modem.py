import logging
import math
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, validator

from services.errors import ConfigError, ContractViolation
from services.signal_core import (
    ComplexSignal,
    DualPolSignal,
    FilterSpec,
    analytic,
    apply_filter,
    frequency_shift,
    measure_power,
)

logger = logging.getLogger(__name__)


def levels_for(order_m: int) -> np.ndarray:
    """Equally spaced zero-mean unit-power levels, ascending"""
    j = np.arange(order_m)
    return (2 * j - (order_m - 1)) / math.sqrt((order_m ** 2 - 1) / 3)


def bits_per_symbol(order_m: int) -> int:
    if order_m < 2 or order_m & (order_m - 1):
        raise ContractViolation(f"Modulation order must be a power of two >= 2, got {order_m}")
    return order_m.bit_length() - 1


def gray_encode(symbols: np.ndarray, order_m: int) -> np.ndarray:
    """Level index -> bits (MSB first); adjacent indices differ in one bit"""
    k = bits_per_symbol(order_m)
    codes = symbols ^ (symbols >> 1)
    shifts = np.arange(k - 1, -1, -1)
    return ((codes[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)


def gray_decode(bits: np.ndarray, order_m: int) -> np.ndarray:
    """Bits (MSB first) -> level index"""
    k = bits_per_symbol(order_m)
    groups = np.asarray(bits, dtype=np.int64).reshape(-1, k)
    codes = groups @ (1 << np.arange(k - 1, -1, -1))
    symbols = codes.copy()
    shift = codes >> 1
    while np.any(shift):
        symbols ^= shift
        shift >>= 1
    return symbols


class SymbolFrame:
    """Gray-coded PAM frame: the ground truth for BER counting"""

    def __init__(self, bits: np.ndarray, symbols: np.ndarray, levels: np.ndarray, order_m: int):
        k = bits_per_symbol(order_m)
        self.bits = np.asarray(bits, dtype=np.uint8)
        self.symbols = np.asarray(symbols, dtype=np.int64)
        self.levels = np.asarray(levels, dtype=np.float64)
        self.order_m = order_m
        if self.bits.size != self.symbols.size * k:
            raise ContractViolation(
                f"Frame has {self.bits.size} bits for {self.symbols.size} symbols of {k} bits"
            )
        if self.levels.size != self.symbols.size:
            raise ContractViolation("Frame levels and symbols differ in length")

    @classmethod
    def from_symbols(cls, symbols: Sequence[int], order_m: int = 4) -> "SymbolFrame":
        symbols = np.asarray(symbols, dtype=np.int64)
        if np.any(symbols < 0) or np.any(symbols >= order_m):
            raise ContractViolation(f"Symbols must lie in [0, {order_m - 1}]")
        return cls(gray_encode(symbols, order_m), symbols, levels_for(order_m)[symbols], order_m)

    @property
    def n_symbols(self) -> int:
        return self.symbols.size

    @property
    def n_bits(self) -> int:
        return self.bits.size


def make_frame(n_symbols: int, order_m: int, seed) -> SymbolFrame:
    """Pseudo-random Gray-coded frame, deterministic per seed"""
    if n_symbols < 1:
        raise ContractViolation(f"Need at least one symbol, got {n_symbols}")
    k = bits_per_symbol(order_m)
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=n_symbols * k, dtype=np.uint8)
    symbols = gray_decode(bits, order_m)
    return SymbolFrame(bits, symbols, levels_for(order_m)[symbols], order_m)


class PulseKind(str, Enum):
    RAISED_COSINE = "RaisedCosine"


class PulseShape(BaseModel):
    kind: PulseKind = PulseKind.RAISED_COSINE
    rolloff: float = 0.05
    symbol_rate_hz: float = 48e9

    @validator("rolloff")
    def _rolloff_range(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("roll-off must lie in [0, 1]")
        return v

    @validator("symbol_rate_hz")
    def _rate_positive(cls, v):
        if not v > 0:
            raise ValueError("symbol rate must be positive")
        return v

    @property
    def bandwidth_hz(self) -> float:
        """Two-sided occupied bandwidth (1 + rolloff)·baud"""
        return (1 + self.rolloff) * self.symbol_rate_hz

    def spectrum(self, freqs_hz: np.ndarray) -> np.ndarray:
        """Raised-cosine frequency response, 1 at DC"""
        f = np.abs(np.asarray(freqs_hz, dtype=np.float64))
        t = 1.0 / self.symbol_rate_hz
        beta = self.rolloff
        f1 = (1 - beta) / (2 * t)
        f2 = (1 + beta) / (2 * t)
        out = np.zeros_like(f)
        out[f <= f1] = 1.0
        if beta > 0:
            edge = (f > f1) & (f <= f2)
            out[edge] = 0.5 * (1 + np.cos(np.pi * t / beta * (f[edge] - f1)))
        return out


class Scheme(str, Enum):
    KK_PAM_SSB = "KkPamSsb"
    TWO_SIDED = "TwoSided"


class TxConfig(BaseModel):
    scheme: Scheme = Scheme.KK_PAM_SSB
    bias_power_ratio: float = 10.0
    # Optional explicit A; cross-checked against bias_power_ratio when given
    bias_amp: Optional[float] = None
    gap_hz: float = 0.0
    grid_spacing_hz: float = 80e9
    interleaver: Optional[FilterSpec] = None
    interleaver_offset_hz: float = 18.8e9

    @validator("bias_power_ratio", "gap_hz")
    def _non_negative(cls, v):
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @validator("grid_spacing_hz")
    def _grid_positive(cls, v):
        if not v > 0:
            raise ValueError("grid spacing must be positive")
        return v

    def interleaver_pair(self) -> Tuple[FilterSpec, FilterSpec]:
        """(lower, upper) interleaver passbands centered at ∓offset"""
        if self.interleaver is None:
            raise ConfigError("Two-sided scheme requires an interleaver filter")
        return (
            self.interleaver.shifted(-self.interleaver_offset_hz),
            self.interleaver.shifted(self.interleaver_offset_hz),
        )


def samples_per_symbol(pulse: PulseShape, sample_rate_hz: float) -> Fraction:
    """Exact sample_rate/baud, or ConfigError when the two are incommensurate"""
    ratio = sample_rate_hz / pulse.symbol_rate_hz
    sps = Fraction(ratio).limit_denominator(10_000)
    if abs(float(sps) - ratio) > 1e-9 * ratio:
        raise ConfigError(
            f"Sample rate {sample_rate_hz:.6g} Hz is incommensurate with {pulse.symbol_rate_hz:.6g} Bd"
        )
    return sps


def commensurate_rate(symbol_rate_hz: float, min_rate_hz: float, n_symbols: int, denominator: int = 16) -> float:
    """Smallest k/denominator·baud >= min_rate whose sample count over the frame is even"""
    k = max(1, math.ceil(min_rate_hz * denominator / symbol_rate_hz - 1e-9))
    while True:
        count = Fraction(n_symbols * k, denominator)
        if count.denominator == 1 and count.numerator % 2 == 0:
            return k * symbol_rate_hz / denominator
        k += 1


def shape(frame: SymbolFrame, pulse: PulseShape, sample_rate_hz: float) -> ComplexSignal:
    """
    Raised-cosine shaped PAM waveform Σ a_k g(t - kT), placed cyclically over the frame.

    Built in the frequency domain, so any rational samples-per-symbol works and the spectrum is
    exactly band-limited. g is scaled by 1/√(1 - rolloff/4) which gives unit mean power for unit
    power symbols; symbol k sits at t = kT.
    """
    if sample_rate_hz < pulse.bandwidth_hz:
        raise ContractViolation(
            f"Sample rate {sample_rate_hz / 1e9:.2f} GHz below the pulse bandwidth "
            f"{pulse.bandwidth_hz / 1e9:.2f} GHz"
        )
    sps = samples_per_symbol(pulse, sample_rate_hz)
    n_frac = frame.n_symbols * sps
    if n_frac.denominator != 1 or n_frac.numerator % 2:
        raise ContractViolation(
            f"{frame.n_symbols} symbols at {sps} samples/symbol do not give an even sample count"
        )
    n = int(n_frac)
    freqs = np.fft.fftfreq(n, d=1.0 / sample_rate_hz)
    scale = 1.0 / math.sqrt(1 - pulse.rolloff / 4)
    data_spectrum = np.fft.fft(frame.levels)
    # bin frequency in units of the frame's fundamental R/N, folded onto the data DFT
    harmonic = np.round(freqs * frame.n_symbols / pulse.symbol_rate_hz).astype(np.int64) % frame.n_symbols
    coefficients = pulse.spectrum(freqs) * data_spectrum[harmonic]
    samples = n * np.fft.ifft(coefficients * scale / frame.n_symbols)
    return ComplexSignal.real(samples.real, sample_rate_hz)


def kkpam_components(frame: SymbolFrame, pulse: PulseShape, cfg: TxConfig, sample_rate_hz: float
                     ) -> Tuple[ComplexSignal, ComplexSignal, float]:
    """(shaped real lane, zero-mean SSB field, bias amplitude A) with A² = ratio·P_s"""
    shaped = shape(frame, pulse, sample_rate_hz)
    ssb = analytic(shaped)
    p_s = measure_power(ssb)
    bias_amp = math.sqrt(cfg.bias_power_ratio * p_s)
    if cfg.bias_amp is not None and not math.isclose(cfg.bias_amp ** 2, bias_amp ** 2, rel_tol=1e-9):
        raise ContractViolation(
            f"Configured bias amplitude {cfg.bias_amp:.6g} does not match ratio {cfg.bias_power_ratio} "
            f"of P_s={p_s:.6g} W"
        )
    return shaped, ssb, bias_amp


def build_kkpam(frame: SymbolFrame, pulse: PulseShape, cfg: TxConfig, sample_rate_hz: float) -> ComplexSignal:
    """A + g_SSB-shaped frame (ideal I/Q modulator)"""
    if cfg.scheme != Scheme.KK_PAM_SSB:
        raise ConfigError(f"build_kkpam needs scheme KkPamSsb, got {cfg.scheme.value}")
    if not cfg.bias_power_ratio > 0:
        raise ConfigError("KK-PAM needs a positive bias power ratio")
    _, ssb, bias_amp = kkpam_components(frame, pulse, cfg, sample_rate_hz)
    return ssb.with_samples(ssb.samples + bias_amp)


def split_halves(x: ComplexSignal) -> Tuple[ComplexSignal, ComplexSignal]:
    """(positive-frequency half, negative-frequency half); DC is shared equally"""
    spectrum = np.fft.fft(x.samples)
    freqs = x.freqs
    pos = np.where(freqs > 0, spectrum, 0.0)
    neg = np.where(freqs < 0, spectrum, 0.0)
    pos[0] = neg[0] = spectrum[0] / 2
    return x.with_samples(np.fft.ifft(pos)), x.with_samples(np.fft.ifft(neg))


def open_gap(x: ComplexSignal, gap_hz: float) -> ComplexSignal:
    """Move the positive half up and the negative half down by gap/2 (bin-snapped)"""
    pos, neg = split_halves(x)
    up = frequency_shift(pos, gap_hz / 2, snap_to_grid=True)
    down = frequency_shift(neg, -gap_hz / 2, snap_to_grid=True)
    return x.with_samples(up.samples + down.samples)


def _check_grid_room(pulse: PulseShape, cfg: TxConfig) -> None:
    needed = cfg.gap_hz / 2 + pulse.bandwidth_hz / 2
    if needed > cfg.grid_spacing_hz / 2:
        raise ConfigError(
            f"Gap {cfg.gap_hz / 1e9:.2f} GHz plus {pulse.bandwidth_hz / 1e9:.2f} GHz signal needs "
            f"{needed / 1e9:.2f} GHz per side but the grid leaves {cfg.grid_spacing_hz / 2e9:.2f} GHz"
        )


def two_sided_branches(frame_lo: SymbolFrame, frame_hi: SymbolFrame, pulse: PulseShape,
                       cfg: TxConfig, sample_rate_hz: float) -> Tuple[ComplexSignal, ComplexSignal]:
    """(lower sideband, upper sideband) after gap opening and interleaving"""
    if cfg.scheme != Scheme.TWO_SIDED:
        raise ConfigError(f"build_two_sided needs scheme TwoSided, got {cfg.scheme.value}")
    _check_grid_room(pulse, cfg)
    lower_filter, upper_filter = cfg.interleaver_pair()
    lo = open_gap(shape(frame_lo, pulse, sample_rate_hz), cfg.gap_hz)
    hi = open_gap(shape(frame_hi, pulse, sample_rate_hz), cfg.gap_hz)
    return apply_filter(lo, lower_filter), apply_filter(hi, upper_filter)


def build_two_sided(frame_lo: SymbolFrame, frame_hi: SymbolFrame, pulse: PulseShape,
                    cfg: TxConfig, sample_rate_hz: float) -> ComplexSignal:
    """Two independent real lanes on opposite sidebands around an empty guard band; no carrier"""
    lower, upper = two_sided_branches(frame_lo, frame_hi, pulse, cfg, sample_rate_hz)
    return lower.with_samples(lower.samples + upper.samples)


def build_qam_field(frame_i: SymbolFrame, frame_q: SymbolFrame, pulse: PulseShape,
                    sample_rate_hz: float) -> ComplexSignal:
    """Unit-power square QAM field from two PAM lanes"""
    lane_i = shape(frame_i, pulse, sample_rate_hz)
    lane_q = shape(frame_q, pulse, sample_rate_hz)
    return lane_i.with_samples((lane_i.samples + 1j * lane_q.samples) / math.sqrt(2))


def polmux(x_field: ComplexSignal, y_field: ComplexSignal) -> DualPolSignal:
    if not x_field.same_grid(y_field):
        raise ContractViolation(f"Cannot multiplex fields on different grids: {x_field!r}, {y_field!r}")
    return DualPolSignal(x_field, y_field)


def wdm_mux(channels: List[DualPolSignal], spacing_hz: float) -> DualPolSignal:
    """Place channel k at (k - (N-1)/2)·spacing (bin-snapped) and sum"""
    if not channels:
        raise ContractViolation("WDM multiplex needs at least one channel")
    first = channels[0]
    n_ch = len(channels)
    outer = (n_ch - 1) / 2 * spacing_hz + (spacing_hz / 2 if n_ch > 1 else 0.0)
    if outer >= first.sample_rate_hz / 2:
        raise ContractViolation(
            f"{n_ch} channels at {spacing_hz / 1e9:.1f} GHz need ±{outer / 1e9:.1f} GHz, beyond "
            f"the ±{first.sample_rate_hz / 2e9:.1f} GHz simulation band"
        )
    total = np.zeros((2, first.n), dtype=np.complex128)
    for k, channel in enumerate(channels):
        if not channel.x.same_grid(first.x):
            raise ContractViolation("WDM channels must share one simulation grid")
        offset = (k - (n_ch - 1) / 2) * spacing_hz
        shifted = channel.map(lambda s: frequency_shift(s, offset, snap_to_grid=True))
        total += shifted.as_array()
    return first.with_array(total)


def occupied_bandwidth(pulse: PulseShape, gap_hz: float = 0.0) -> Dict[str, float]:
    """Nominal (baud + gap) and roll-off inclusive widths, plus the gap's spectral-efficiency cost"""
    nominal = pulse.symbol_rate_hz + gap_hz
    return {
        "nominal_hz": nominal,
        "rolloff_inclusive_hz": pulse.bandwidth_hz + gap_hz,
        "efficiency_loss": gap_hz / nominal,
    }
