import logging
import math

import numpy as np
import pytest
from pydantic import ValidationError

from services.channel_model import apply_cd, haar_unitary
from services.errors import ContractViolation, IllConditionedError
from services.kk_receiver import (
    BerKind,
    BerReport,
    KkConfig,
    LinkKind,
    ReconstructionDiagnostics,
    adc,
    analytic_ber,
    crosstalk_db,
    decide_and_count,
    equalize_filters,
    estimate_jones,
    extract_real_lane,
    kk_reconstruct,
    osnr_to_snr,
    photodetect,
    polmux_demux,
    receive_kkpam,
    remove_constant_phase,
    theory_curve,
)
from services.signal_core import ComplexSignal, FilterSpec, analytic, apply_filter, decimate, frequency_shift
from services.tx_modem import (
    PulseShape,
    Scheme,
    TxConfig,
    build_kkpam,
    build_qam_field,
    kkpam_components,
    make_frame,
    shape,
    split_halves,
)

# Set up logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

BAUD = 48e9
FS = 16 * BAUD
EQ_RATE = 2 * BAUD
ADC_RATE = 51e9
PULSE = PulseShape(rolloff=0.05, symbol_rate_hz=BAUD)
KKPAM = TxConfig(scheme=Scheme.KK_PAM_SSB, bias_power_ratio=10)


def _kk_cfg(upsample: int = 3) -> KkConfig:
    return KkConfig(adc_rate_hz=ADC_RATE, upsample_factor=upsample, symbol_rate_hz=BAUD)


def _relative_rms(actual: np.ndarray, reference: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(actual - reference) ** 2) / np.mean(np.abs(reference) ** 2)))


def _kkpam_error(field: ComplexSignal, upsample: int) -> float:
    """Relative RMS between the recovered and the true field, both phase-aligned on the bias"""
    recovered = remove_constant_phase(kk_reconstruct(adc(photodetect(field), ADC_RATE), _kk_cfg(upsample)))
    truth = remove_constant_phase(decimate(field, EQ_RATE))
    return _relative_rms(recovered.samples, truth.samples)


def test_single_tone_is_recovered_exactly():
    """A(1 + 0.5·e^{iωt}) is minimum phase, so KK returns it to numerical precision"""
    fs, n, f0 = 64e9, 256, 1e9
    t = np.arange(n) / fs
    field = ComplexSignal(2.0 * (1 + 0.5 * np.exp(2j * np.pi * f0 * t)), fs)
    cfg = KkConfig(adc_rate_hz=fs, upsample_factor=2, symbol_rate_hz=4e9)
    recovered = kk_reconstruct(photodetect(field), cfg)
    truth = decimate(field, cfg.output_rate_hz)
    assert recovered.n == truth.n == 32
    assert _relative_rms(recovered.samples, truth.samples) < 1e-6


def test_kkpam_reconstruction_improves_with_upsampling():
    field = build_kkpam(make_frame(4096, 4, 21), PULSE, KKPAM, FS)
    errors = {u: _kkpam_error(field, u) for u in (2, 3, 4, 6)}
    logger.info("Reconstruction error by upsample factor: " + ", ".join(
        f"{u}x={e:.3e}" for u, e in errors.items()
    ))
    assert errors[2] > errors[3] > errors[4] > errors[6]
    assert errors[3] < 1e-3


def test_kkpam_noiseless_loop_is_error_free():
    frame = make_frame(4096, 4, 22)
    _, ssb, bias = kkpam_components(frame, PULSE, KKPAM, FS)
    field = ssb.with_samples(ssb.samples + bias)
    diagnostics = ReconstructionDiagnostics()
    lane = receive_kkpam(field, bias, _kk_cfg(), diagnostics=diagnostics)
    report = decide_and_count(lane, frame, PULSE)
    logger.info(f"Noiseless KK-PAM lane error: {report.reconstruction_rms:.3e}")
    assert report.n_errors == 0
    assert report.n_bits == 8192
    assert diagnostics.clip_count == 0
    assert not diagnostics.flagged


def test_digital_cd_compensation_after_kk():
    """1700 ps/nm compensated after reconstruction at a 10 dB bias stays error-free"""
    frame = make_frame(4096, 4, 23)
    field = build_kkpam(frame, PULSE, KKPAM, FS)
    _, _, bias = kkpam_components(frame, PULSE, KKPAM, FS)
    dispersed = apply_cd(field, 1700)
    lane = receive_kkpam(dispersed, bias, _kk_cfg(), digital_cd_ps_nm=1700)
    assert decide_and_count(lane, frame, PULSE).n_errors == 0


def test_reconstruction_is_scale_covariant():
    """Scaling the intensity by c² scales the field by c"""
    field = build_kkpam(make_frame(1024, 4, 24), PULSE, KKPAM, FS)
    intensity = adc(photodetect(field), ADC_RATE)
    base = kk_reconstruct(intensity, _kk_cfg())
    scaled = kk_reconstruct(intensity.with_samples(intensity.samples * 9.0), _kk_cfg())
    np.testing.assert_allclose(scaled.samples, 3.0 * base.samples, atol=1e-12 * np.abs(scaled.samples).max())


def test_log_clamp_is_counted_and_flagged():
    n = 1024
    values = np.where((np.arange(n) // 64) % 2 == 0, 1.0, 0.0)
    diagnostics = ReconstructionDiagnostics()
    kk_reconstruct(ComplexSignal.real(values, 64e9), KkConfig(adc_rate_hz=64e9, symbol_rate_hz=8e9), diagnostics)
    assert diagnostics.clip_count > 0
    assert diagnostics.flagged
    assert 0 < diagnostics.clip_fraction <= 1


def test_reconstruction_contracts():
    with pytest.raises(ContractViolation):
        kk_reconstruct(ComplexSignal(np.exp(1j * np.arange(64)), 64e9), _kk_cfg())
    with pytest.raises(ValidationError):
        KkConfig(adc_rate_hz=ADC_RATE, upsample_factor=5)
    with pytest.raises(ValidationError):
        KkConfig(adc_rate_hz=0.0)
    with pytest.raises(ContractViolation):
        adc(ComplexSignal.real(np.ones(64), 64e9), 128e9)


def test_remove_constant_phase_uses_the_pilot():
    rng = np.random.default_rng(25)
    carrier = 3.0 + 0.1 * (rng.standard_normal(256) + 1j * rng.standard_normal(256))
    x = ComplexSignal(carrier * np.exp(0.7j), 64e9)
    aligned = remove_constant_phase(x)
    assert np.angle(np.mean(aligned.samples)) == pytest.approx(0.0, abs=1e-12)

    with pytest.raises(ContractViolation):
        remove_constant_phase(ComplexSignal(np.exp(2j * np.pi * np.arange(256) / 256), 64e9))


def test_remove_constant_phase_against_a_known_waveform():
    rng = np.random.default_rng(31)
    pilot = ComplexSignal(rng.choice([-1.0, 1.0], 256) + 1j * rng.choice([-1.0, 1.0], 256), 64e9)
    x = pilot.with_samples(2.0 * pilot.samples * np.exp(-1.2j) + 0.05 * rng.standard_normal(256))
    aligned = remove_constant_phase(x, pilot)
    assert np.angle(np.vdot(pilot.samples, aligned.samples)) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(aligned.samples, 2.0 * pilot.samples, atol=0.2)

    tone = ComplexSignal(np.exp(2j * np.pi * np.arange(256) / 256), 64e9)
    with pytest.raises(ContractViolation):
        remove_constant_phase(tone.with_samples(tone.samples ** 2), tone)
    with pytest.raises(ContractViolation):
        remove_constant_phase(x, ComplexSignal(np.ones(128), 64e9))


def test_extract_real_lane_closes_the_gap():
    lane = shape(make_frame(1024, 4, 26), PULSE, EQ_RATE * 4)
    bias = 2.5
    assert np.allclose(extract_real_lane(lane.with_samples(lane.samples + bias), bias).samples, lane.samples)

    gap = 8.6e9
    pos, neg = split_halves(lane)
    # a tone inside the guard band belongs to neither sideband
    in_gap = 0.3 * np.exp(2j * np.pi * 32 * np.arange(lane.n) / lane.n)
    for side, half, shift in (("upper", pos, gap / 2), ("lower", neg, -gap / 2)):
        moved = frequency_shift(half, shift, snap_to_grid=True)
        restored = extract_real_lane(moved.with_samples(moved.samples + bias + in_gap), bias, gap, side)
        np.testing.assert_allclose(restored.samples, lane.samples / 2, atol=1e-12)

    with pytest.raises(ContractViolation):
        extract_real_lane(lane, bias, gap, "middle")


def test_equalize_filters_restores_the_passband():
    spec = FilterSpec(order=12, center_hz=12.6e9, bw3db_hz=26e9)
    ssb = analytic(shape(make_frame(1024, 4, 36), PULSE, EQ_RATE * 4))
    restored = equalize_filters(apply_filter(ssb, spec), [spec])
    np.testing.assert_allclose(restored.samples, ssb.samples, atol=1e-9)

    # far outside the passband the gain stops at 1/floor
    tone = ComplexSignal(np.exp(2j * np.pi * 1000 * np.arange(8192) / 8192), EQ_RATE * 4)
    filtered = apply_filter(tone, spec)
    boosted = equalize_filters(filtered, [spec], floor=0.5)
    assert np.max(np.abs(boosted.samples)) <= 2 * np.max(np.abs(filtered.samples)) + 1e-15

    with pytest.raises(ContractViolation):
        equalize_filters(tone, [spec], floor=0.0)


def test_filtered_kkpam_receiver_is_error_free():
    frame = make_frame(4096, 4, 37)
    _, ssb, bias = kkpam_components(frame, PULSE, KKPAM, FS)
    field = ssb.with_samples(ssb.samples + bias)
    spec = FilterSpec(order=12, center_hz=12.6e9, bw3db_hz=26e9)
    lane = receive_kkpam(field, bias, _kk_cfg(), rx_filter=spec)
    report = decide_and_count(lane, frame, PULSE)
    logger.info(f"Filtered receiver reconstruction rms {report.reconstruction_rms:.3e}")
    assert report.n_errors == 0
    assert report.reconstruction_rms < 0.05


def test_polarization_demux_over_random_rotations():
    """50 Haar rotations are undone to better than -30 dB crosstalk"""
    x = build_qam_field(make_frame(2048, 4, 27), make_frame(2048, 4, 28), PULSE, EQ_RATE)
    y = build_qam_field(make_frame(2048, 4, 29), make_frame(2048, 4, 30), PULSE, EQ_RATE)
    reference = np.vstack([x.samples, y.samples])
    worst = -math.inf
    for seed in range(50):
        u = haar_unitary(seed)
        rx_arr = u @ reference
        rx = (x.with_samples(rx_arr[0]), y.with_samples(rx_arr[1]))
        w = estimate_jones(rx, (x, y), 512)
        worst = max(worst, crosstalk_db(w @ u))
        out_x, out_y = polmux_demux(rx, (x, y))
        np.testing.assert_allclose(out_x.samples, x.samples, atol=1e-9)
        np.testing.assert_allclose(out_y.samples, y.samples, atol=1e-9)
    logger.info(f"Worst residual crosstalk over 50 rotations: {worst:.1f} dB")
    assert worst < -30


def test_degenerate_training_is_ill_conditioned():
    x = build_qam_field(make_frame(512, 4, 31), make_frame(512, 4, 32), PULSE, EQ_RATE)
    with pytest.raises(IllConditionedError) as excinfo:
        polmux_demux((x, x), (x, x))
    assert excinfo.value.condition_number > 1e3


def test_decide_and_count_is_gain_and_offset_blind():
    frame = make_frame(2048, 4, 33)
    lane = shape(frame, PULSE, EQ_RATE)
    skewed = lane.with_samples(0.3 * lane.samples + 0.1)
    report = decide_and_count(skewed, frame, PULSE)
    assert report.n_errors == 0
    assert report.ber == 0.0
    assert report.reconstruction_rms < 1e-6

    with pytest.raises(ContractViolation):
        decide_and_count(lane, make_frame(1024, 4, 33), PULSE)


def test_awgn_ber_matches_the_analytic_curve():
    """4-PAM at 12 dB per-symbol SNR lands within 3σ of the Gray nearest-neighbour BER"""
    frame = make_frame(2 ** 15, 4, 34)
    lane = shape(frame, PULSE, EQ_RATE)
    snr = 10 ** 1.2
    scale = 1 / math.sqrt(1 - PULSE.rolloff / 4)
    # white real noise over ±R; the decision lowpass keeps a (1+β)/2 share of it
    sigma = scale / math.sqrt(snr * (1 + PULSE.rolloff))
    noise = np.random.default_rng(35).standard_normal(lane.n) * sigma
    report = decide_and_count(lane.with_samples(lane.samples + noise), frame, PULSE)

    expected = analytic_ber(4, snr) * frame.n_bits
    logger.info(f"AWGN errors {report.n_errors}, expected {expected:.1f}")
    assert abs(report.n_errors - expected) < 3 * math.sqrt(expected) + 5


def test_analytic_ber_values():
    assert analytic_ber(4, 10.0) == pytest.approx(0.0170626, rel=1e-4)
    # 16-QAM at 13 dB has the same Q argument as 4-PAM at 10 dB
    assert analytic_ber(16, 20.0, BerKind.QAM_COHERENT) == pytest.approx(0.0170626, rel=1e-4)
    curve = analytic_ber(4, np.array([5.0, 10.0, 20.0]))
    assert np.all(np.diff(curve) < 0)

    with pytest.raises(ContractViolation):
        analytic_ber(4, 0.0)
    with pytest.raises(ContractViolation):
        analytic_ber(8, 10.0, BerKind.QAM_COHERENT)


def test_osnr_to_snr_and_theory_curve():
    assert osnr_to_snr(20, LinkKind.KK_PAM, BAUD) == pytest.approx(100 * 12.5 / 48)
    assert osnr_to_snr(20, LinkKind.TWO_SIDED_LANE, BAUD) == pytest.approx(100 * 12.5 / 96)
    assert osnr_to_snr(20, LinkKind.QAM_DUAL_POL, BAUD) == pytest.approx(100 * 12.5 / 48)

    curve = theory_curve([10, 15, 20], LinkKind.KK_PAM, BAUD)
    assert [o for o, _ in curve] == [10.0, 15.0, 20.0]
    assert curve[0][1] > curve[1][1] > curve[2][1]


def test_ber_report_pooling():
    pooled = BerReport.combine([
        BerReport(n_bits=1000, n_errors=10, ber=0.01, clip_count=2, reconstruction_rms=0.1),
        BerReport(n_bits=3000, n_errors=2, ber=2 / 3000, min_phase_violations=1),
    ])
    assert pooled.n_bits == 4000
    assert pooled.n_errors == 12
    assert pooled.ber == pytest.approx(0.003)
    assert pooled.clip_count == 2
    assert pooled.min_phase_violations == 1
    assert pooled.reconstruction_rms == pytest.approx(0.1)

    with pytest.raises(ValidationError):
        BerReport(ber=1.5)
