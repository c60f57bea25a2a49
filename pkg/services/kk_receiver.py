import logging
import math
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, validator
from scipy.linalg import polar
from scipy.special import erfc

from services.channel_model import apply_cd
from services.errors import ContractViolation, IllConditionedError
from services.signal_core import (
    ComplexSignal,
    FilterSpec,
    apply_filter,
    decimate,
    frequency_shift,
    hilbert_values,
    lowpass,
    resample,
    snap_frequency,
    transfer,
)
from services.tx_modem import PulseShape, SymbolFrame, gray_encode, levels_for

logger = logging.getLogger(__name__)

# Warn when more than this fraction of intensity samples hit the log floor
CLIP_WARN_FRACTION = 1e-3

# Maximum condition number accepted for a polarization estimate
MAX_CONDITION = 1e3

# Static filter equalization never boosts a bin by more than 1/FILTER_GAIN_FLOOR
FILTER_GAIN_FLOOR = 0.5


class KkConfig(BaseModel):
    adc_rate_hz: float
    upsample_factor: int = 3
    # Relative to the peak intensity of the frame
    log_floor: float = 1e-12
    lo_power_ratio: float = 0.0
    symbol_rate_hz: float = 48e9
    output_samples_per_symbol: int = 2

    @validator("upsample_factor")
    def _supported_upsampling(cls, v):
        if v not in (2, 3, 4, 6):
            raise ValueError("upsample_factor must be one of 2, 3, 4, 6")
        return v

    @validator("adc_rate_hz", "log_floor", "symbol_rate_hz")
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("must be positive")
        return v

    @property
    def output_rate_hz(self) -> float:
        return self.output_samples_per_symbol * self.symbol_rate_hz


class ReconstructionDiagnostics(BaseModel):
    clip_count: int = 0
    n_samples: int = 0
    flagged: bool = False
    winding_violations: int = 0

    @property
    def clip_fraction(self) -> float:
        return self.clip_count / self.n_samples if self.n_samples else 0.0


class BerReport(BaseModel):
    n_bits: int = 0
    n_errors: int = 0
    ber: float = 0.0
    per_pol_ber: Optional[Tuple[float, float]] = None
    min_phase_violations: int = 0
    clip_count: int = 0
    reconstruction_rms: Optional[float] = None

    @validator("ber")
    def _ber_range(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("BER must lie in [0, 1]")
        return v

    @classmethod
    def combine(cls, reports: Sequence["BerReport"]) -> "BerReport":
        """Pool counts over runs/polarizations; rms is the bit-weighted mean where available"""
        n_bits = sum(r.n_bits for r in reports)
        n_errors = sum(r.n_errors for r in reports)
        rms = [r.reconstruction_rms for r in reports if r.reconstruction_rms is not None]
        return cls(
            n_bits=n_bits,
            n_errors=n_errors,
            ber=n_errors / n_bits if n_bits else 0.0,
            min_phase_violations=sum(r.min_phase_violations for r in reports),
            clip_count=sum(r.clip_count for r in reports),
            reconstruction_rms=float(np.mean(rms)) if rms else None,
        )


def add_lo(x: ComplexSignal, lo_amp: float) -> ComplexSignal:
    """CW tone at the grid center (ω = 0)"""
    return x.with_samples(x.samples + lo_amp)


def photodetect(x: ComplexSignal) -> ComplexSignal:
    return ComplexSignal.real(np.abs(x.samples) ** 2, x.sample_rate_hz, x.center_freq_hz)


def adc(intensity: ComplexSignal, rate_hz: float) -> ComplexSignal:
    """Ideal anti-alias filter at rate/2 followed by decimation"""
    if rate_hz > intensity.sample_rate_hz:
        raise ContractViolation(
            f"ADC rate {rate_hz / 1e9:.2f} GHz above the simulation rate {intensity.sample_rate_hz / 1e9:.2f} GHz"
        )
    return decimate(intensity, rate_hz)


def kk_reconstruct(intensity: ComplexSignal, cfg: KkConfig,
                   diagnostics: Optional[ReconstructionDiagnostics] = None) -> ComplexSignal:
    """
    Field from intensity: upsample, φ = ½·H{log I}, field = √I·e^{iφ}, then down to the
    equalization grid.

    Intensities below ``cfg.log_floor`` times the peak are clamped before the log. The count is
    written to ``diagnostics`` and a warning is logged when it exceeds CLIP_WARN_FRACTION.
    """
    if not intensity.is_real():
        raise ContractViolation("kk_reconstruct expects a real photocurrent")
    up = resample(intensity, cfg.upsample_factor)
    values = up.samples.real
    floor = cfg.log_floor * float(values.max()) if values.max() > 0 else cfg.log_floor
    clipped = values < floor
    values = np.maximum(values, floor)
    phase = 0.5 * hilbert_values(np.log(values))
    field = up.with_samples(np.sqrt(values) * np.exp(1j * phase))

    clip_count = int(np.count_nonzero(clipped))
    if clip_count > CLIP_WARN_FRACTION * values.size:
        logger.warning(
            f"KK log clamp hit {clip_count}/{values.size} samples; the field is probably not minimum phase"
        )
    if diagnostics is not None:
        diagnostics.clip_count += clip_count
        diagnostics.n_samples += values.size
        diagnostics.flagged = diagnostics.flagged or clip_count > CLIP_WARN_FRACTION * values.size

    return decimate(field, cfg.output_rate_hz)


def cd_compensate(x: ComplexSignal, total_ps_nm: float, wavelength_nm: float = 1550.0) -> ComplexSignal:
    return apply_cd(x, -total_ps_nm, wavelength_nm)


def remove_constant_phase(x: ComplexSignal, pilot: Optional[ComplexSignal] = None) -> ComplexSignal:
    """
    Rotate out the common phase of ``x``.

    Without a pilot the DC tone (bias or LO) is made real and positive. With a known ``pilot``
    waveform on the same grid, ``x`` is rotated onto it instead, which also works for fields
    that carry no DC tone.
    """
    rms = float(np.sqrt(np.mean(np.abs(x.samples) ** 2)))
    if pilot is None:
        reference = complex(np.mean(x.samples))
        missing = "No DC pilot present; constant phase is unobservable"
    else:
        if not x.same_grid(pilot):
            raise ContractViolation("Pilot and signal must share a grid")
        pilot_rms = float(np.sqrt(np.mean(np.abs(pilot.samples) ** 2)))
        reference = complex(np.vdot(pilot.samples, x.samples)) / x.n
        rms *= pilot_rms
        missing = "Signal is orthogonal to the pilot; constant phase is unobservable"
    if abs(reference) < 1e-9 * rms or rms == 0.0:
        raise ContractViolation(missing)
    return x.with_samples(x.samples * np.exp(-1j * np.angle(reference)))


def extract_real_lane(x: ComplexSignal, bias_amp: float, gap_hz: float = 0.0,
                      sideband: str = "upper") -> ComplexSignal:
    """
    Subtract the DC pilot and keep the in-phase component.

    With a guard band only the sideband's own half, beyond gap/2 on its side, is kept before the
    gap is closed; noise in the gap or on the image side is dropped with the pilot residue. The
    result then carries half the lane amplitude.
    """
    if sideband not in ("upper", "lower"):
        raise ContractViolation(f"Unknown sideband {sideband!r}")
    centred = x.with_samples(x.samples - bias_amp)
    if gap_hz:
        edge = snap_frequency(gap_hz / 2, x.bin_hz)
        tolerance = x.bin_hz / 2
        if sideband == "upper":
            keep = x.freqs >= edge - tolerance
        else:
            keep = x.freqs <= -edge + tolerance
        one_sided = centred.with_samples(np.fft.ifft(np.where(keep, np.fft.fft(centred.samples), 0.0)))
        shift = -gap_hz / 2 if sideband == "upper" else gap_hz / 2
        centred = frequency_shift(one_sided, shift, snap_to_grid=True)
    return ComplexSignal.real(centred.samples.real, x.sample_rate_hz, x.center_freq_hz)


def equalize_filters(x: ComplexSignal, filters: Sequence[FilterSpec],
                     floor: float = FILTER_GAIN_FLOOR) -> ComplexSignal:
    """Divide out the product of known zero-phase filter responses, with the gain capped at 1/floor"""
    if not 0.0 < floor <= 1.0:
        raise ContractViolation(f"Gain floor must lie in (0, 1], got {floor}")
    response = np.ones(x.n)
    for spec in filters:
        response = response * transfer(spec, x.freqs)
    return x.with_samples(np.fft.ifft(np.fft.fft(x.samples) / np.maximum(response, floor)))


def estimate_jones(rx: Tuple[ComplexSignal, ComplexSignal], training: Tuple[ComplexSignal, ComplexSignal],
                   n_train: int) -> np.ndarray:
    """Least-squares 2×2 matrix W with W·rx ≈ training, projected onto the nearest unitary"""
    r = np.vstack([rx[0].samples[:n_train], rx[1].samples[:n_train]])
    t = np.vstack([training[0].samples[:n_train], training[1].samples[:n_train]])
    solution, _, rank, _ = np.linalg.lstsq(r.T, t.T, rcond=None)
    w = solution.T
    condition = float(np.linalg.cond(w)) if rank == 2 else math.inf
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        logger.error(f"Polarization estimate is ill-conditioned (cond={condition:.3e})")
        raise IllConditionedError("Polarization demultiplexing estimate is ill-conditioned", condition)
    unitary, _ = polar(w)
    return unitary


def polmux_demux(rx: Tuple[ComplexSignal, ComplexSignal], training: Tuple[ComplexSignal, ComplexSignal],
                 n_train: int = 512) -> Tuple[ComplexSignal, ComplexSignal]:
    """
    Undo a frequency-flat polarization rotation using a known training prefix.

    ``n_train`` counts samples; the default is 256 symbols at 2 samples per symbol. A common phase on
    both polarizations is absorbed into the estimate.
    """
    if not rx[0].same_grid(training[0]):
        raise ContractViolation("Training reference and received lanes must share a grid")
    w = estimate_jones(rx, training, n_train)
    out = w @ np.vstack([rx[0].samples, rx[1].samples])
    return rx[0].with_samples(out[0]), rx[1].with_samples(out[1])


def crosstalk_db(matrix: np.ndarray) -> float:
    """Off-diagonal to diagonal power ratio of a (residual) Jones matrix"""
    power = np.abs(matrix) ** 2
    off = power[0, 1] + power[1, 0]
    on = power[0, 0] + power[1, 1]
    return 10 * math.log10(max(off, 1e-300) / on)


def decide_and_count(rx_lane: ComplexSignal, frame: SymbolFrame, pulse: PulseShape,
                     refine_iterations: int = 2) -> BerReport:
    """
    Lowpass to the signal band, sample at kT, normalize, decide, Gray-decode and count.

    The scale is first set to unit power, then refined by decision-directed least squares
    (gain and offset) so the thresholds do not inherit the noise-inflated RMS.
    """
    sps = rx_lane.sample_rate_hz / pulse.symbol_rate_hz
    if abs(sps - round(sps)) > 1e-9 or round(sps) < 1:
        raise ContractViolation(f"Decision needs an integer samples/symbol, got {sps:.6g}")
    sps = int(round(sps))
    if rx_lane.n != frame.n_symbols * sps:
        raise ContractViolation(f"Lane has {rx_lane.n} samples for {frame.n_symbols} symbols at {sps} sps")

    filtered = lowpass(rx_lane, pulse.bandwidth_hz / 2) if sps > 1 else rx_lane
    y = filtered.samples.real[::sps]
    levels = levels_for(frame.order_m)
    thresholds = (levels[1:] + levels[:-1]) / 2

    power = float(np.mean(y ** 2))
    if power > 0:
        y = y / math.sqrt(power)
    for _ in range(refine_iterations):
        decided = levels[np.searchsorted(thresholds, y)]
        basis = np.vstack([decided, np.ones_like(decided)]).T
        (gain, offset), *_ = np.linalg.lstsq(basis, y, rcond=None)
        if gain <= 0:
            break
        y = (y - offset) / gain

    decided_symbols = np.searchsorted(thresholds, y)
    rx_bits = gray_encode(decided_symbols, frame.order_m)
    n_errors = int(np.count_nonzero(rx_bits != frame.bits))

    reference = frame.levels
    ref_rms = float(np.sqrt(np.mean(reference ** 2)))
    rms = float(np.sqrt(np.mean((y - reference) ** 2)) / ref_rms) if ref_rms > 0 else None
    return BerReport(
        n_bits=frame.n_bits,
        n_errors=n_errors,
        ber=n_errors / frame.n_bits,
        reconstruction_rms=rms,
    )


def q_function(x):
    return 0.5 * erfc(np.asarray(x) / math.sqrt(2))


class BerKind(str, Enum):
    PAM_COHERENT = "PamCoherent"
    QAM_COHERENT = "QamCoherent"


def analytic_ber(order_m: int, snr_per_symbol, kind: BerKind = BerKind.PAM_COHERENT):
    """Gray-coded nearest-neighbour BER for M-PAM, or square M-QAM via its PAM quadratures"""
    snr = np.asarray(snr_per_symbol, dtype=np.float64)
    if np.any(snr <= 0):
        raise ContractViolation("SNR must be positive")
    if kind == BerKind.PAM_COHERENT:
        k = math.log2(order_m)
        ber = 2 * (order_m - 1) / (order_m * k) * q_function(np.sqrt(6 * snr / (order_m ** 2 - 1)))
    else:
        side = math.isqrt(order_m)
        if side * side != order_m:
            raise ContractViolation(f"QAM order must be a square, got {order_m}")
        k = math.log2(side)
        ber = 2 * (side - 1) / (side * k) * q_function(np.sqrt(3 * snr / (order_m - 1)))
    return float(ber) if ber.ndim == 0 else ber


class LinkKind(str, Enum):
    KK_PAM = "KkPam"
    TWO_SIDED_LANE = "TwoSidedLane"
    QAM_DUAL_POL = "QamDualPol"


def osnr_to_snr(osnr_db: float, kind: LinkKind, symbol_rate_hz: float, ref_bw_hz: float = 12.5e9) -> float:
    """
    Decision-point Es/N0 for an OSNR measured in ``ref_bw_hz``.

    KK-PAM: the real lane carries P_s/2 and sees the in-phase part of one-sided noise, giving
    OSNR_eq·B_ref/R_s. TS-KK: each of the four lanes (2 sidebands × 2 polarizations) carries a
    quarter of the power against half the noise, giving OSNR·B_ref/(2R_s). Dual-pol QAM: each
    polarization carries half the power against half the noise, giving OSNR·B_ref/R_s.
    """
    osnr = 10 ** (osnr_db / 10)
    if kind == LinkKind.TWO_SIDED_LANE:
        return osnr * ref_bw_hz / (2 * symbol_rate_hz)
    return osnr * ref_bw_hz / symbol_rate_hz


def theory_curve(osnr_db: Sequence[float], kind: LinkKind, symbol_rate_hz: float,
                 ref_bw_hz: float = 12.5e9) -> List[Tuple[float, float]]:
    """(OSNR, BER) pairs of the coherent reference curve for a link kind"""
    order, ber_kind = (16, BerKind.QAM_COHERENT) if kind == LinkKind.QAM_DUAL_POL else (4, BerKind.PAM_COHERENT)
    return [
        (float(o), analytic_ber(order, osnr_to_snr(o, kind, symbol_rate_hz, ref_bw_hz), ber_kind))
        for o in osnr_db
    ]


def receive_kkpam(field: ComplexSignal, bias_amp_rx: float, cfg: KkConfig,
                  rx_filter: Optional[FilterSpec] = None, digital_cd_ps_nm: float = 0.0,
                  diagnostics: Optional[ReconstructionDiagnostics] = None) -> ComplexSignal:
    """
    Optical filter, photodiode, ADC, KK, optional digital CD compensation, real lane.

    ``bias_amp_rx`` is the bias amplitude ahead of ``rx_filter``. The filter's known response is
    divided out after reconstruction, so the lane is free of its in-band tilt.
    """
    bias = bias_amp_rx
    if rx_filter is not None:
        field = apply_filter(field, rx_filter)
        h0 = float(transfer(rx_filter, np.array([0.0]))[0])
        bias *= h0 / max(h0, FILTER_GAIN_FLOOR)
    intensity = adc(photodetect(field), cfg.adc_rate_hz)
    recovered = kk_reconstruct(intensity, cfg, diagnostics)
    if digital_cd_ps_nm:
        recovered = cd_compensate(recovered, digital_cd_ps_nm)
    if rx_filter is not None:
        recovered = equalize_filters(recovered, [rx_filter])
    recovered = remove_constant_phase(recovered)
    return extract_real_lane(recovered, bias)


def receive_sideband(branch: ComplexSignal, lo_amp: float, cfg: KkConfig, sideband: str,
                     digital_cd_ps_nm: float = 0.0,
                     diagnostics: Optional[ReconstructionDiagnostics] = None) -> ComplexSignal:
    """
    One de-interleaved TS-KK branch -> complex sideband field (LO removed) on the equalization grid.

    The lower branch is mirrored (conjugated) so the KK relation sees its content above the LO, and
    mirrored back afterwards.
    """
    mirrored = sideband == "lower"
    if mirrored:
        branch = branch.with_samples(np.conj(branch.samples))
    intensity = adc(photodetect(add_lo(branch, lo_amp)), cfg.adc_rate_hz)
    recovered = kk_reconstruct(intensity, cfg, diagnostics)
    if mirrored:
        recovered = recovered.with_samples(np.conj(recovered.samples))
    if digital_cd_ps_nm:
        recovered = cd_compensate(recovered, digital_cd_ps_nm)
    recovered = remove_constant_phase(recovered)
    return recovered.with_samples(recovered.samples - lo_amp)
