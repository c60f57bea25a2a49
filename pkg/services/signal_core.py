"""
FFT-grid signal representation and the DSP primitives everything else is built on.

All transforms treat a frame as one periodic block. Frequencies passed to filters, bands and
shifts are offsets from the frame's ``center_freq_hz``; the metadata itself never moves.
"""
import logging
from enum import Enum
from fractions import Fraction
from typing import Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, validator

from services.errors import AliasingError, ContractViolation, DegenerateTrajectoryError

logger = logging.getLogger(__name__)

# Out-of-band energy fraction tolerated when decimating
ALIASING_TOLERANCE = 1e-6

# Magnitudes below this fraction of the peak count as "at the origin"
DEGENERATE_FRACTION = 1e-15

Rational = Union[int, float, Fraction]


class ComplexSignal:
    """Uniformly sampled complex baseband waveform; power is |sample|² in W"""

    def __init__(self, samples, sample_rate_hz: float, center_freq_hz: float = 0.0):
        arr = np.array(samples, dtype=np.complex128)
        if arr.ndim != 1:
            raise ContractViolation(f"Signal samples must be one-dimensional, got shape {arr.shape}")
        if arr.size < 2 or arr.size % 2:
            raise ContractViolation(f"Signal length must be even and >= 2, got {arr.size}")
        if not sample_rate_hz > 0:
            raise ContractViolation(f"Sample rate must be positive, got {sample_rate_hz}")
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("Signal contains NaN or Inf samples")
        self.samples = arr
        self.sample_rate_hz = float(sample_rate_hz)
        self.center_freq_hz = float(center_freq_hz)

    @classmethod
    def real(cls, values, sample_rate_hz: float, center_freq_hz: float = 0.0) -> "ComplexSignal":
        """Wrap a real-valued waveform (photocurrent, PAM lane)"""
        return cls(np.asarray(values, dtype=np.float64), sample_rate_hz, center_freq_hz)

    def with_samples(self, samples) -> "ComplexSignal":
        """New signal on the same grid"""
        return ComplexSignal(samples, self.sample_rate_hz, self.center_freq_hz)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n) / self.sample_rate_hz

    @property
    def freqs(self) -> np.ndarray:
        """Bin frequencies in numpy FFT order"""
        return np.fft.fftfreq(self.n, d=1.0 / self.sample_rate_hz)

    @property
    def bin_hz(self) -> float:
        return self.sample_rate_hz / self.n

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) / self.sample_rate_hz)

    def is_real(self) -> bool:
        return bool(np.all(self.samples.imag == 0.0))

    def same_grid(self, other: "ComplexSignal") -> bool:
        return (
            self.n == other.n
            and self.sample_rate_hz == other.sample_rate_hz
            and self.center_freq_hz == other.center_freq_hz
        )

    def __repr__(self) -> str:
        return (
            f"ComplexSignal(n={self.n}, sample_rate_hz={self.sample_rate_hz:.6g}, "
            f"center_freq_hz={self.center_freq_hz:.6g})"
        )


class DualPolSignal:
    """x/y polarization pair on a shared timebase"""

    def __init__(self, x: ComplexSignal, y: ComplexSignal):
        if not x.same_grid(y):
            raise ContractViolation(f"Polarization grids differ: {x!r} vs {y!r}")
        self.x = x
        self.y = y

    @classmethod
    def from_array(cls, arr: np.ndarray, sample_rate_hz: float, center_freq_hz: float = 0.0) -> "DualPolSignal":
        return cls(
            ComplexSignal(arr[0], sample_rate_hz, center_freq_hz),
            ComplexSignal(arr[1], sample_rate_hz, center_freq_hz),
        )

    def as_array(self) -> np.ndarray:
        """Jones-vector samples, shape (2, n)"""
        return np.vstack([self.x.samples, self.y.samples])

    def with_array(self, arr: np.ndarray) -> "DualPolSignal":
        return DualPolSignal.from_array(arr, self.sample_rate_hz, self.center_freq_hz)

    def map(self, func) -> "DualPolSignal":
        """Apply a single-polarization operation to both polarizations"""
        return DualPolSignal(func(self.x), func(self.y))

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def sample_rate_hz(self) -> float:
        return self.x.sample_rate_hz

    @property
    def center_freq_hz(self) -> float:
        return self.x.center_freq_hz

    @property
    def power(self) -> float:
        return measure_power(self.x) + measure_power(self.y)


class FilterShape(str, Enum):
    SUPER_GAUSSIAN = "SuperGaussian"


class FilterSpec(BaseModel):
    shape: FilterShape = FilterShape.SUPER_GAUSSIAN
    order: int
    center_hz: float = 0.0
    bw3db_hz: float
    # "double": exponent 2*order, "total": exponent order
    order_convention: Literal["double", "total"] = "double"

    @validator("order")
    def _order_positive(cls, v):
        if v < 1:
            raise ValueError("filter order must be a positive integer")
        return v

    @validator("bw3db_hz")
    def _bw_positive(cls, v):
        if not v > 0:
            raise ValueError("3-dB bandwidth must be positive")
        return v

    @property
    def exponent(self) -> int:
        return 2 * self.order if self.order_convention == "double" else self.order

    def shifted(self, center_hz: float) -> "FilterSpec":
        return self.copy(update={"center_hz": center_hz})


def _as_fraction(value: Rational) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(value).limit_denominator(1_000_000)


def _require_real(x: ComplexSignal, op: str) -> None:
    if not x.is_real():
        raise ContractViolation(f"{op} requires a real-valued signal")


def hilbert_values(values: np.ndarray) -> np.ndarray:
    """Hilbert transform of a real array: spectrum times -i·sgn(f), DC and Nyquist zeroed"""
    n = values.size
    spectrum = np.fft.fft(values)
    h = -1j * np.sign(np.fft.fftfreq(n))
    if n % 2 == 0:
        h[n // 2] = 0.0
    return np.fft.ifft(spectrum * h).real


def hilbert(x: ComplexSignal) -> ComplexSignal:
    """
    Periodic Hilbert transform with H{cos(ωt)} = sin(ωt) for ω > 0.

    Raises ContractViolation for complex input.
    """
    _require_real(x, "hilbert")
    return ComplexSignal.real(hilbert_values(x.samples.real), x.sample_rate_hz, x.center_freq_hz)


def analytic(x: ComplexSignal) -> ComplexSignal:
    """x + iH{x}; the real part is the input, bit for bit"""
    _require_real(x, "analytic")
    out = np.empty(x.n, dtype=np.complex128)
    out.real = x.samples.real
    out.imag = hilbert_values(x.samples.real)
    return x.with_samples(out)


def snap_frequency(df_hz: float, bin_hz: float) -> float:
    """Nearest frequency that is an integer number of FFT bins"""
    return round(df_hz / bin_hz) * bin_hz


def frequency_shift(x: ComplexSignal, df_hz: float, snap_to_grid: bool = False) -> ComplexSignal:
    """
    Multiply by exp(i2π·df·t). Content moves, metadata does not.

    With ``snap_to_grid`` the shift is rounded to a whole number of bins, which keeps a cyclic
    frame periodic (a sub-bin shift leaves a phase jump at the frame boundary).
    """
    if abs(df_hz) >= x.sample_rate_hz / 2:
        raise ContractViolation(
            f"Shift of {df_hz / 1e9:.3f} GHz exceeds the representable band "
            f"(±{x.sample_rate_hz / 2e9:.3f} GHz)"
        )
    if snap_to_grid:
        df_hz = snap_frequency(df_hz, x.bin_hz)
    if df_hz == 0.0:
        return x.with_samples(x.samples)
    return x.with_samples(x.samples * np.exp(2j * np.pi * df_hz * x.t))


def resample(x: ComplexSignal, factor: Rational) -> ComplexSignal:
    """
    Fourier-domain resampling by a rational factor.

    Upsampling zero-pads the spectrum; downsampling truncates it and refuses to proceed if more than
    ALIASING_TOLERANCE of the energy lies outside the retained band. The Nyquist bin is split (or
    folded) symmetrically so real signals stay real.
    """
    ratio = _as_fraction(factor)
    if ratio <= 0:
        raise ContractViolation(f"Resampling factor must be positive, got {ratio}")
    m_frac = x.n * ratio
    if m_frac.denominator != 1 or int(m_frac) < 2 or int(m_frac) % 2:
        raise ContractViolation(f"Resampling {x.n} samples by {ratio} does not give an even integer length")
    n, m = x.n, int(m_frac)
    new_rate = x.sample_rate_hz * float(ratio)
    if m == n:
        return x.with_samples(x.samples)

    spectrum = np.fft.fft(x.samples)
    out = np.zeros(m, dtype=np.complex128)
    if m > n:
        half = n // 2
        out[:half] = spectrum[:half]
        out[m - half + 1:] = spectrum[half + 1:]
        out[half] = spectrum[half] / 2
        out[m - half] = spectrum[half] / 2
    else:
        half = m // 2
        k = np.arange(n)
        distance = np.minimum(k, n - k)
        total = float(np.sum(np.abs(spectrum) ** 2))
        aliased = float(np.sum(np.abs(spectrum[distance > half]) ** 2))
        if total > 0 and aliased / total > ALIASING_TOLERANCE:
            raise AliasingError(f"Downsampling {x.n} -> {m} samples would alias", aliased / total)
        out[:half] = spectrum[:half]
        out[half + 1:] = spectrum[n - half + 1:]
        out[half] = spectrum[half] + spectrum[n - half]
    samples = np.fft.ifft(out) * (m / n)
    if x.is_real():
        samples = samples.real
    return ComplexSignal(samples, new_rate, x.center_freq_hz)


def lowpass(x: ComplexSignal, cutoff_hz: float) -> ComplexSignal:
    """Ideal brick-wall lowpass keeping |f| < cutoff"""
    spectrum = np.fft.fft(x.samples)
    spectrum[np.abs(x.freqs) >= cutoff_hz] = 0.0
    samples = np.fft.ifft(spectrum)
    if x.is_real():
        samples = samples.real
    return x.with_samples(samples)


def decimate(x: ComplexSignal, rate_hz: float) -> ComplexSignal:
    """Band-limit to the target Nyquist band, then resample onto the target rate"""
    ratio = _as_fraction(rate_hz) / _as_fraction(x.sample_rate_hz)
    if ratio == 1:
        return x.with_samples(x.samples)
    if ratio < 1:
        x = lowpass(x, rate_hz / 2)
    return resample(x, ratio)


def transfer(spec: FilterSpec, freqs_hz: np.ndarray) -> np.ndarray:
    """Zero-phase super-Gaussian magnitude, exactly 1/√2 at center ± bw3db/2"""
    x = 2.0 * np.abs(np.asarray(freqs_hz, dtype=np.float64) - spec.center_hz) / spec.bw3db_hz
    return np.exp(-0.5 * np.log(2.0) * x ** spec.exponent)


def apply_filter(x: ComplexSignal, spec: FilterSpec) -> ComplexSignal:
    spectrum = np.fft.fft(x.samples) * transfer(spec, x.freqs)
    samples = np.fft.ifft(spectrum)
    if x.is_real() and spec.center_hz == 0.0:
        samples = samples.real
    return x.with_samples(samples)


def rolloff_span(spec: FilterSpec, upper: float = 0.9, lower: float = 0.1) -> float:
    """Per-edge distance (Hz) between the |H|² = upper and |H|² = lower points"""
    if not 0 < lower < upper < 1:
        raise ContractViolation(f"Power points must satisfy 0 < lower < upper < 1, got {lower}, {upper}")

    def offset(p: float) -> float:
        return (-np.log(p) / np.log(2.0)) ** (1.0 / spec.exponent) * spec.bw3db_hz / 2

    return float(offset(lower) - offset(upper))


def winding_number(x: ComplexSignal) -> int:
    """Net encirclements of the origin over the (cyclic) frame; positive for counter-clockwise"""
    s = x.samples
    mags = np.abs(s)
    peak = float(mags.max())
    if peak == 0.0 or float(mags.min()) < DEGENERATE_FRACTION * peak:
        raise DegenerateTrajectoryError("Trajectory passes through the origin; winding number undefined")
    steps = np.angle(np.roll(s, -1) * np.conj(s))
    return int(np.round(np.sum(steps) / (2 * np.pi)))


def measure_power(x: ComplexSignal, band: Optional[Tuple[float, float]] = None) -> float:
    """Mean |sample|², or the Parseval share inside [band[0], band[1]]"""
    if band is None:
        return float(np.mean(np.abs(x.samples) ** 2))
    lo, hi = band
    nyquist = x.sample_rate_hz / 2
    if lo >= hi:
        raise ContractViolation(f"Empty band [{lo}, {hi}]")
    if lo < -nyquist or hi > nyquist:
        raise ContractViolation(f"Band [{lo}, {hi}] exceeds the Nyquist range ±{nyquist}")
    freqs = x.freqs
    mask = (freqs >= lo) & (freqs <= hi)
    if not np.any(mask):
        raise ContractViolation(f"Band [{lo}, {hi}] contains no frequency bins")
    spectrum = np.fft.fft(x.samples)
    return float(np.sum(np.abs(spectrum[mask]) ** 2) / x.n ** 2)


def power_spectrum(x: ComplexSignal) -> Tuple[np.ndarray, np.ndarray]:
    """(frequencies ascending, per-bin power in W) with Σ power = mean |x|²"""
    spectrum = np.fft.fftshift(np.fft.fft(x.samples))
    return np.fft.fftshift(x.freqs), np.abs(spectrum) ** 2 / x.n ** 2
