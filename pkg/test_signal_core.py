import logging

import numpy as np
import pytest
from pydantic import ValidationError

from services.errors import AliasingError, ContractViolation, DegenerateTrajectoryError
from services.signal_core import (
    ComplexSignal,
    DualPolSignal,
    FilterSpec,
    analytic,
    apply_filter,
    decimate,
    frequency_shift,
    hilbert,
    lowpass,
    measure_power,
    power_spectrum,
    resample,
    rolloff_span,
    transfer,
    winding_number,
)

# Set up logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

FS = 64e9
N = 4096


def _random_real(seed: int, n: int = N, fs: float = FS, band: float = None) -> ComplexSignal:
    rng = np.random.default_rng(seed)
    x = ComplexSignal.real(rng.standard_normal(n), fs)
    return lowpass(x, band or fs / 4)


def test_hilbert_of_cosine_is_sine():
    """H{cos} = sin for a positive-frequency tone"""
    t = np.arange(N) / FS
    f0 = 37 * FS / N
    x = ComplexSignal.real(np.cos(2 * np.pi * f0 * t), FS)
    h = hilbert(x)
    np.testing.assert_allclose(h.samples.real, np.sin(2 * np.pi * f0 * t), atol=1e-10)
    assert h.is_real()


def test_hilbert_twice_is_negation():
    """H∘H = -I on a zero-mean band-limited signal"""
    x = _random_real(1)
    x = x.with_samples(x.samples - np.mean(x.samples))
    twice = hilbert(hilbert(x))
    np.testing.assert_allclose(twice.samples, -x.samples, atol=1e-10)


def test_hilbert_is_linear():
    a, b = _random_real(2), _random_real(3)
    combined = hilbert(a.with_samples(2.5 * a.samples - 0.75 * b.samples))
    separate = 2.5 * hilbert(a).samples - 0.75 * hilbert(b).samples
    np.testing.assert_allclose(combined.samples, separate, atol=1e-12)


def test_hilbert_rejects_complex_input():
    x = ComplexSignal(np.exp(1j * np.linspace(0, 1, N)), FS)
    with pytest.raises(ContractViolation):
        hilbert(x)
    with pytest.raises(ContractViolation):
        analytic(x)


def test_analytic_signal_is_one_sided():
    """Negative-frequency energy of x + iH{x} vanishes and the real part is the input bit for bit"""
    x = _random_real(4)
    z = analytic(x)
    spectrum = np.abs(np.fft.fft(z.samples)) ** 2
    negative = spectrum[z.freqs < 0].sum()
    logger.info(f"Negative-frequency energy fraction: {negative / spectrum.sum():.3e}")
    assert negative / spectrum.sum() < 1e-20
    assert np.array_equal(z.samples.real, x.samples.real)


def test_signal_construction_contracts():
    with pytest.raises(ContractViolation):
        ComplexSignal(np.ones(7), FS)
    with pytest.raises(ContractViolation):
        ComplexSignal(np.array([1.0, np.nan]), FS)
    with pytest.raises(ContractViolation):
        ComplexSignal(np.ones(8), 0.0)
    with pytest.raises(ContractViolation):
        DualPolSignal(ComplexSignal(np.ones(8), FS), ComplexSignal(np.ones(8), 2 * FS))


def test_frequency_shift_moves_a_tone_by_whole_bins():
    t = np.arange(N) / FS
    bin_hz = FS / N
    x = ComplexSignal(np.exp(2j * np.pi * 10 * bin_hz * t), FS)
    shifted = frequency_shift(x, 25.4 * bin_hz, snap_to_grid=True)
    peak = int(np.argmax(np.abs(np.fft.fft(shifted.samples))))
    assert peak == 35
    assert shifted.center_freq_hz == x.center_freq_hz

    with pytest.raises(ContractViolation):
        frequency_shift(x, FS / 2)


def test_resample_round_trip_and_reality():
    """Upsampling then decimating a band-limited real signal returns it unchanged"""
    x = _random_real(5)
    up = resample(x, 3)
    assert up.n == 3 * N
    assert up.sample_rate_hz == pytest.approx(3 * FS)
    assert up.is_real()
    back = resample(up, 1 / 3)
    np.testing.assert_allclose(back.samples, x.samples, atol=1e-10)


def test_resample_refuses_to_alias():
    x = _random_real(6, band=FS / 2)
    with pytest.raises(AliasingError) as excinfo:
        resample(x, 0.5)
    assert excinfo.value.aliased_fraction > 1e-6

    # Decimate band-limits first, so the same request succeeds
    down = decimate(x, FS / 2)
    assert down.n == N // 2


def test_filter_transfer_edges_and_conventions():
    spec = FilterSpec(order=4, bw3db_hz=36e9)
    edges = transfer(spec, np.array([-18e9, 18e9, 0.0]))
    np.testing.assert_allclose(edges[:2], 1 / np.sqrt(2), rtol=1e-12)
    assert edges[2] == 1.0

    total = spec.copy(update={"order_convention": "total"})
    assert total.exponent == 4
    assert spec.exponent == 8
    assert transfer(total, np.array([18e9]))[0] == pytest.approx(1 / np.sqrt(2))


def test_interleaver_rolloff_span_and_center_transmission():
    """Order-4, 36 GHz super-Gaussian: ~7 GHz 90%-10% roll-off, 0.612 at the offset grid center"""
    spec = FilterSpec(order=4, bw3db_hz=36e9)
    span = rolloff_span(spec)
    logger.info(f"Roll-off span: {span / 1e9:.4f} GHz")
    assert span == pytest.approx(6.691e9, abs=5e6)

    upper = spec.shifted(18.8e9)
    assert transfer(upper, np.array([0.0]))[0] == pytest.approx(0.6122, abs=1e-4)

    with pytest.raises(ContractViolation):
        rolloff_span(spec, upper=0.1, lower=0.9)


def test_filter_spec_validation():
    with pytest.raises(ValidationError):
        FilterSpec(order=0, bw3db_hz=10e9)
    with pytest.raises(ValidationError):
        FilterSpec(order=2, bw3db_hz=-1.0)


def test_apply_filter_keeps_real_signals_real_only_when_centered():
    x = _random_real(7)
    assert apply_filter(x, FilterSpec(order=2, bw3db_hz=10e9)).is_real()
    assert not apply_filter(x, FilterSpec(order=2, bw3db_hz=10e9, center_hz=3e9)).is_real()


def test_measure_power_parseval_and_bands():
    x = _random_real(8)
    assert measure_power(x, (-FS / 2, FS / 2)) == pytest.approx(measure_power(x), rel=1e-12)

    t = np.arange(N) / FS
    tone = ComplexSignal(0.3 * np.exp(2j * np.pi * 64 * FS / N * t), FS)
    assert measure_power(tone, (0.0, 1e9)) == pytest.approx(0.09, rel=1e-12)
    assert measure_power(tone, (-5e9, -1e9)) == pytest.approx(0.0, abs=1e-20)

    with pytest.raises(ContractViolation):
        measure_power(tone, (2e9, 1e9))
    with pytest.raises(ContractViolation):
        measure_power(tone, (0.0, FS))
    with pytest.raises(ContractViolation):
        measure_power(tone, (1e3, 2e3))


def test_power_spectrum_sums_to_power():
    x = _random_real(9)
    freqs, power = power_spectrum(x)
    assert np.all(np.diff(freqs) > 0)
    assert power.sum() == pytest.approx(measure_power(x), rel=1e-12)


def test_winding_number():
    n = 256
    theta = 2 * np.pi * np.arange(n) / n
    assert winding_number(ComplexSignal(np.exp(1j * theta), FS)) == 1
    assert winding_number(ComplexSignal(np.exp(-2j * theta), FS)) == -2
    assert winding_number(ComplexSignal(2 + np.exp(1j * theta), FS)) == 0

    with pytest.raises(DegenerateTrajectoryError):
        winding_number(ComplexSignal(np.zeros(n), FS))
