"""
Fiber and amplifier physics.

Conventions: numpy FFT ordering with e^{+iωt} for positive frequency; the linear fiber operator is
exp((iβ₂ω²/2 - α/2)·z) and the Manakov Kerr term rotates both polarizations by
(8/9)·γ·(|Ax|² + |Ay|²)·z.
"""
import logging
import math
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.fft
from pydantic import BaseModel, validator
from scipy.constants import c as SPEED_OF_LIGHT, h as PLANCK
from scipy.stats import unitary_group

from services.errors import ContractViolation, ConvergenceError
from services.signal_core import ComplexSignal, DualPolSignal, FilterSpec, apply_filter

logger = logging.getLogger(__name__)

MANAKOV_FACTOR = 8.0 / 9.0

Field = Union[ComplexSignal, DualPolSignal]


def beta2_from_dispersion(dispersion_s_per_m2: float, wavelength_m: float) -> float:
    """β₂ = -D·λ²/(2πc)"""
    return -dispersion_s_per_m2 * wavelength_m ** 2 / (2 * math.pi * SPEED_OF_LIGHT)


class FiberSpanParams(BaseModel):
    length_km: float = 100.0
    dispersion_ps_nm_km: float = 17.0
    gamma_per_W_km: float = 1.3
    alpha_db_km: float = 0.2
    reference_wavelength_nm: float = 1550.0

    @validator("length_km", "reference_wavelength_nm")
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("must be positive")
        return v

    @validator("gamma_per_W_km", "alpha_db_km")
    def _non_negative(cls, v):
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @property
    def beta2_s2_per_m(self) -> float:
        # ps/(nm·km) -> s/m²
        return beta2_from_dispersion(self.dispersion_ps_nm_km * 1e-6, self.reference_wavelength_nm * 1e-9)

    @property
    def alpha_per_m(self) -> float:
        """Power attenuation coefficient"""
        return self.alpha_db_km * math.log(10) / 10 / 1e3

    @property
    def gamma_per_W_m(self) -> float:
        return self.gamma_per_W_km / 1e3

    @property
    def length_m(self) -> float:
        return self.length_km * 1e3

    @property
    def total_dispersion_ps_nm(self) -> float:
        return self.dispersion_ps_nm_km * self.length_km

    @property
    def loss_db(self) -> float:
        return self.alpha_db_km * self.length_km


class StepConfig(BaseModel):
    step_km: float = 0.1
    check_convergence: bool = False
    tolerance: float = 1e-4
    # scipy.fft worker threads; results do not depend on this
    workers: int = 1

    @validator("step_km", "tolerance")
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("must be positive")
        return v


class NoiseMode(str, Enum):
    TARGET_OSNR = "TargetOsnr"
    AMPLIFIER_CHAIN = "AmplifierChain"


class NoiseSpec(BaseModel):
    mode: NoiseMode = NoiseMode.TARGET_OSNR
    osnr_db: Optional[float] = None
    ref_bw_hz: float = 12.5e9
    exclude_bias: bool = True
    nf_db: float = 5.0
    loss_budget_db: float = 26.0
    wavelength_nm: float = 1550.0

    @validator("ref_bw_hz")
    def _ref_bw_positive(cls, v):
        if not v > 0:
            raise ValueError("reference bandwidth must be positive")
        return v


def _omega(n: int, sample_rate_hz: float) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(n, d=1.0 / sample_rate_hz)


def cd_beta2_total(total_ps_nm: float, wavelength_nm: float = 1550.0) -> float:
    """Accumulated β₂·L in s² for a dispersion total in ps/nm"""
    return beta2_from_dispersion(total_ps_nm * 1e-3, wavelength_nm * 1e-9)


def apply_cd(x: ComplexSignal, total_ps_nm: float, wavelength_nm: float = 1550.0) -> ComplexSignal:
    """All-pass quadratic spectral phase exp(+iβ₂L·ω²/2)"""
    if total_ps_nm == 0.0:
        return x.with_samples(x.samples)
    b2l = cd_beta2_total(total_ps_nm, wavelength_nm)
    phase = np.exp(0.5j * b2l * _omega(x.n, x.sample_rate_hz) ** 2)
    return x.with_samples(np.fft.ifft(np.fft.fft(x.samples) * phase))


def _as_dual(x: Field) -> Tuple[DualPolSignal, bool]:
    if isinstance(x, DualPolSignal):
        return x, True
    zero = x.with_samples(np.zeros(x.n))
    return DualPolSignal(x, zero), False


def _split_step(fields: np.ndarray, omega: np.ndarray, span: FiberSpanParams, step_m: float,
                workers: int) -> np.ndarray:
    n_steps = max(1, math.ceil(span.length_m / step_m - 1e-9))
    dz = span.length_m / n_steps
    linear = 0.5j * span.beta2_s2_per_m * omega ** 2 - span.alpha_per_m / 2
    half = np.exp(linear * dz / 2)
    full = np.exp(linear * dz)
    if span.gamma_per_W_m == 0.0:
        return scipy.fft.ifft(scipy.fft.fft(fields, axis=1, workers=workers)
                              * np.exp(linear * span.length_m), axis=1, workers=workers)
    kerr = MANAKOV_FACTOR * span.gamma_per_W_m * dz
    a = scipy.fft.ifft(scipy.fft.fft(fields, axis=1, workers=workers) * half, axis=1, workers=workers)
    for step in range(n_steps):
        power = np.sum(np.abs(a) ** 2, axis=0)
        a = a * np.exp(1j * kerr * power)
        op = full if step < n_steps - 1 else half
        a = scipy.fft.ifft(scipy.fft.fft(a, axis=1, workers=workers) * op, axis=1, workers=workers)
    return a


def propagate_manakov(x: Field, span: FiberSpanParams, step_cfg: Optional[StepConfig] = None) -> Field:
    """
    Symmetric split-step solution of the Manakov equation over one span.

    A single ComplexSignal is treated as the x polarization with y = 0. With
    ``step_cfg.check_convergence`` the span is re-run at half the step and a ConvergenceError is
    raised when the two outputs differ by more than ``step_cfg.tolerance`` relative RMS.
    """
    step_cfg = step_cfg or StepConfig()
    dual, was_dual = _as_dual(x)
    omega = _omega(dual.n, dual.sample_rate_hz)
    fields = dual.as_array()
    step_m = step_cfg.step_km * 1e3
    out = _split_step(fields, omega, span, step_m, step_cfg.workers)

    if step_cfg.check_convergence and span.gamma_per_W_m > 0:
        finer = _split_step(fields, omega, span, step_m / 2, step_cfg.workers)
        norm = float(np.sqrt(np.sum(np.abs(finer) ** 2)))
        change = float(np.sqrt(np.sum(np.abs(out - finer) ** 2))) / norm if norm > 0 else 0.0
        if change > step_cfg.tolerance:
            logger.error(f"Split-step did not converge at {step_cfg.step_km} km steps: {change:.3e}")
            raise ConvergenceError(f"Halving the {step_cfg.step_km} km step changed the output", change)
        logger.debug(f"Split-step self check passed ({change:.2e})")

    result = dual.with_array(out)
    return result if was_dual else result.x


def propagate_link(x: Field, spans: List[FiberSpanParams], step_cfg: Optional[StepConfig] = None,
                   launch_power_w: Optional[float] = None) -> Field:
    """
    Propagate through consecutive spans, each followed by a noiseless amplifier restoring the span
    loss. The field is scaled to ``launch_power_w`` for propagation and returned at its input scale.
    """
    dual, was_dual = _as_dual(x)
    p_in = dual.power
    scale = math.sqrt(launch_power_w / p_in) if launch_power_w and p_in > 0 else 1.0
    current = dual.with_array(dual.as_array() * scale)
    for index, span in enumerate(spans):
        current = propagate_manakov(current, span, step_cfg)
        current = current.with_array(current.as_array() * 10 ** (span.loss_db / 20))
        logger.debug(f"Span {index + 1}/{len(spans)} done ({span.length_km} km)")
    result = current.with_array(current.as_array() / scale)
    return result if was_dual else result.x


def ase_psd(gain_db: float, nf_db: float, wavelength_nm: float = 1550.0) -> float:
    """ASE PSD per polarization (W/Hz): (G-1)·n_sp·hν with n_sp = F/2"""
    gain = 10 ** (gain_db / 10)
    n_sp = 10 ** (nf_db / 10) / 2
    nu = SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
    return (gain - 1) * n_sp * PLANCK * nu


def _complex_noise(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    sigma = math.sqrt(variance / 2)
    return sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def amplify(x: Field, gain_db: float, nf_db: float, seed, wavelength_nm: float = 1550.0) -> Field:
    """Gain √G on the field plus white circular-Gaussian ASE on every polarization"""
    if gain_db < 0:
        raise ContractViolation(f"Amplifier gain must be >= 0 dB, got {gain_db}")
    dual, was_dual = _as_dual(x)
    fields = dual.as_array() * 10 ** (gain_db / 20)
    psd = ase_psd(gain_db, nf_db, wavelength_nm)
    if psd > 0:
        rng = np.random.default_rng(seed)
        n_pols = 2 if was_dual else 1
        fields[:n_pols] += _complex_noise(rng, (n_pols, dual.n), psd * dual.sample_rate_hz)
    result = dual.with_array(fields)
    return result if was_dual else result.x


def load_noise_to_osnr(x: Field, spec: NoiseSpec, p_signal_W: float, seed,
                       osnr_db: Optional[float] = None) -> Field:
    """
    Add white noise so that p_signal / (noise power in ref_bw) equals the target OSNR.

    ``p_signal_W`` is P_s when ``spec.exclude_bias`` (equivalent OSNR), the total power otherwise;
    the caller decides which. Dual-pol noise is split equally between the polarizations.
    """
    if not p_signal_W > 0:
        raise ContractViolation(f"Signal power must be positive, got {p_signal_W}")
    target = spec.osnr_db if osnr_db is None else osnr_db
    if target is None:
        raise ContractViolation("No target OSNR given")
    psd_total = p_signal_W / (10 ** (target / 10) * spec.ref_bw_hz)
    rng = np.random.default_rng(seed)
    if isinstance(x, DualPolSignal):
        noise = _complex_noise(rng, (2, x.n), psd_total * x.sample_rate_hz / 2)
        return x.with_array(x.as_array() + noise)
    noise = _complex_noise(rng, x.n, psd_total * x.sample_rate_hz)
    return x.with_samples(x.samples + noise)


def chain_launch_power(spec: NoiseSpec, osnr_db: float, n_pols: int) -> float:
    """Signal power at the pre-amplifier output giving ``osnr_db`` with the configured NF"""
    psd = ase_psd(spec.loss_budget_db, spec.nf_db, spec.wavelength_nm) * n_pols
    return 10 ** (osnr_db / 10) * psd * spec.ref_bw_hz


def apply_noise(x: Field, spec: NoiseSpec, p_signal_W: float, seed, osnr_db: Optional[float] = None
                ) -> Tuple[Field, float]:
    """
    Noise loading in either mode; returns (noisy field, field scale factor).

    In AmplifierChain mode the signal is set to the power that yields the requested OSNR, attenuated
    by the loss budget and restored by a pre-amplifier with the configured noise figure, so the
    returned field carries the scale factor relative to the input.
    """
    if spec.mode == NoiseMode.TARGET_OSNR:
        return load_noise_to_osnr(x, spec, p_signal_W, seed, osnr_db), 1.0
    target = spec.osnr_db if osnr_db is None else osnr_db
    if target is None:
        raise ContractViolation("No target OSNR given")
    n_pols = 2 if isinstance(x, DualPolSignal) else 1
    scale = math.sqrt(chain_launch_power(spec, target, n_pols) / p_signal_W)
    attenuation = 10 ** (-spec.loss_budget_db / 20)
    if isinstance(x, DualPolSignal):
        attenuated = x.with_array(x.as_array() * scale * attenuation)
    else:
        attenuated = x.with_samples(x.samples * scale * attenuation)
    return amplify(attenuated, spec.loss_budget_db, spec.nf_db, seed, spec.wavelength_nm), scale


def measure_osnr(clean: Field, noisy: Field, p_signal_W: float, ref_bw_hz: float = 12.5e9) -> float:
    """OSNR in dB from the known noiseless field; noise PSD taken over the full simulated band"""
    if isinstance(clean, DualPolSignal):
        diff = noisy.as_array() - clean.as_array()
        rate = clean.sample_rate_hz
    else:
        diff = noisy.samples - clean.samples
        rate = clean.sample_rate_hz
    noise_power = float(np.sum(np.mean(np.abs(np.atleast_2d(diff)) ** 2, axis=1)))
    psd = noise_power / rate
    return 10 * math.log10(p_signal_W / (psd * ref_bw_hz))


def haar_unitary(seed) -> np.ndarray:
    """Haar-distributed 2×2 unitary"""
    return unitary_group.rvs(2, random_state=np.random.default_rng(seed))


def random_pol_rotation(x: DualPolSignal, seed) -> Tuple[DualPolSignal, np.ndarray]:
    """Frequency-independent random Jones rotation; returns the matrix for diagnostics"""
    u = haar_unitary(seed)
    return x.with_array(u @ x.as_array()), u


def deinterleave(x: ComplexSignal, lower: FilterSpec, upper: FilterSpec) -> Tuple[ComplexSignal, ComplexSignal]:
    """(lower-sideband branch, upper-sideband branch)"""
    if not lower.center_hz < upper.center_hz:
        raise ContractViolation(
            f"Lower interleaver ({lower.center_hz / 1e9:.2f} GHz) must sit below the upper "
            f"({upper.center_hz / 1e9:.2f} GHz)"
        )
    return apply_filter(x, lower), apply_filter(x, upper)
