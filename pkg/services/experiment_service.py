"""
Seeded sweeps over OSNR or CD for the KK-PAM, TS-KK and coherent 16-QAM links.

Each sweep is split into independent jobs (one per bias ratio and run for KK-PAM, one per run for
the polarization-multiplexed links). A job propagates once and reuses the result across every
OSNR point (and LO ratio), then returns per-point BER counts. Jobs are reduced in index order,
so results do not depend on the worker count.
"""
import logging
import math
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, root_validator, validator
from tqdm import tqdm

from services.channel_model import (
    FiberSpanParams,
    NoiseSpec,
    StepConfig,
    apply_cd,
    apply_noise,
    deinterleave,
    propagate_link,
    random_pol_rotation,
)
from services.errors import ConfigError, DegenerateTrajectoryError, KkSimError
from services.kk_receiver import (
    BerReport,
    KkConfig,
    LinkKind,
    ReconstructionDiagnostics,
    add_lo,
    cd_compensate,
    decide_and_count,
    equalize_filters,
    extract_real_lane,
    polmux_demux,
    receive_kkpam,
    receive_sideband,
    theory_curve,
)
from services.signal_core import (
    ComplexSignal,
    DualPolSignal,
    FilterSpec,
    apply_filter,
    decimate,
    frequency_shift,
    measure_power,
    power_spectrum,
    winding_number,
)
from services.timing import RunTiming, time_stage
from services.tx_modem import (
    PulseShape,
    Scheme,
    SymbolFrame,
    TxConfig,
    build_qam_field,
    commensurate_rate,
    kkpam_components,
    make_frame,
    open_gap,
    polmux,
    shape,
    two_sided_branches,
    wdm_mux,
)

logger = logging.getLogger(__name__)

# Sub-stream identifiers for numpy SeedSequence
FRAME_STAGE = 0
NOISE_STAGE = 1
POLARIZATION_STAGE = 2

NO_LANE = "-"


class LinkSchemeKind(str, Enum):
    KK_PAM_SSB = "KkPamSsb"
    TWO_SIDED_POL_MUX = "TwoSidedPolMux"
    COHERENT_QAM16 = "CoherentQam16"


class CdCompensation(str, Enum):
    OPTICAL = "Optical"
    DIGITAL = "Digital"


class LinkScenario(BaseModel):
    name: str = "scenario"
    scheme: LinkSchemeKind = LinkSchemeKind.KK_PAM_SSB
    baud_hz: float = 48e9
    rolloff: float = 0.05
    n_symbols: int = 2 ** 15
    samples_per_symbol: int = 16
    bias_or_lo_ratio: List[float] = [4.0, 6.0, 8.0, 10.0]
    spans: List[FiberSpanParams] = [FiberSpanParams()]
    n_wdm: int = 1
    spacing_hz: float = 40e9
    gap_hz: float = 8.6e9
    interleaver: FilterSpec = FilterSpec(order=4, bw3db_hz=36e9)
    interleaver_offset_hz: float = 18.8e9
    rx_filter: Optional[FilterSpec] = FilterSpec(order=12, center_hz=16e9, bw3db_hz=26e9)
    osnr_sweep_db: List[float] = []
    cd_sweep_ps_nm: List[float] = []
    # OSNR used while CD is the swept axis
    osnr_db: float = 17.0
    nonlinear: bool = False
    launch_dbm: float = 3.0
    n_runs: int = 10
    base_seed: int = 1
    cd_compensation: List[CdCompensation] = [CdCompensation.DIGITAL]
    noise: NoiseSpec = NoiseSpec()
    step: StepConfig = StepConfig()
    upsample_factor: int = 3
    log_floor: float = 1e-12
    adc_rate_hz: Optional[float] = None
    n_train_symbols: int = 256
    spectra: bool = False

    @validator("cd_compensation", pre=True)
    def _wrap_single_mode(cls, v):
        return [v] if isinstance(v, str) else v

    @validator("n_runs", "n_symbols", "n_wdm", "samples_per_symbol")
    def _at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @validator("base_seed")
    def _seed_non_negative(cls, v):
        if v < 0:
            raise ValueError("base_seed must be non-negative")
        return v

    @validator("bias_or_lo_ratio")
    def _ratios_positive(cls, v):
        if any(r < 0 for r in v):
            raise ValueError("bias/LO ratios must be non-negative")
        return v

    @root_validator(skip_on_failure=True)
    def _one_sweep_axis(cls, values):
        has_osnr = bool(values.get("osnr_sweep_db"))
        has_cd = bool(values.get("cd_sweep_ps_nm"))
        if has_osnr == has_cd:
            raise ValueError("exactly one of osnr_sweep_db / cd_sweep_ps_nm must be set")
        if has_cd and values.get("scheme") != LinkSchemeKind.KK_PAM_SSB:
            raise ValueError("CD sweeps are defined for the KkPamSsb scheme only")
        if values.get("scheme") != LinkSchemeKind.COHERENT_QAM16:
            ratios = values.get("bias_or_lo_ratio")
            if not ratios:
                raise ValueError("at least one bias/LO ratio is required")
            # KK needs a carrier to reconstruct against
            if any(r == 0 for r in ratios):
                raise ValueError(f"{values['scheme'].value} needs bias/LO ratios > 0")
        return values

    @property
    def sample_rate_hz(self) -> float:
        return self.samples_per_symbol * self.baud_hz

    @property
    def total_cd_ps_nm(self) -> float:
        return sum(span.total_dispersion_ps_nm for span in self.spans)

    @property
    def wavelength_nm(self) -> float:
        return self.spans[0].reference_wavelength_nm if self.spans else 1550.0

    @property
    def axis_name(self) -> str:
        return "osnr_db" if self.osnr_sweep_db else "cd_ps_nm"

    @property
    def axis_values(self) -> List[float]:
        return list(self.osnr_sweep_db or self.cd_sweep_ps_nm)

    @property
    def launch_power_w(self) -> float:
        """Per-channel launch power"""
        return 1e-3 * 10 ** (self.launch_dbm / 10)

    def pulse(self) -> PulseShape:
        return PulseShape(rolloff=self.rolloff, symbol_rate_hz=self.baud_hz)

    def ratios(self) -> List[float]:
        return [0.0] if self.scheme == LinkSchemeKind.COHERENT_QAM16 else list(self.bias_or_lo_ratio)

    def link_spans(self) -> List[FiberSpanParams]:
        if self.nonlinear:
            return list(self.spans)
        return [span.copy(update={"gamma_per_W_km": 0.0}) for span in self.spans]

    def min_adc_rate_hz(self) -> float:
        """Two-sided width of the detected beat spectrum"""
        pulse = self.pulse()
        if self.scheme == LinkSchemeKind.TWO_SIDED_POL_MUX:
            return pulse.bandwidth_hz + self.gap_hz
        return pulse.bandwidth_hz

    def resolved_adc_rate_hz(self) -> float:
        if self.adc_rate_hz:
            return self.adc_rate_hz
        return commensurate_rate(self.baud_hz, self.min_adc_rate_hz(), self.n_symbols)

    def kk_config(self) -> KkConfig:
        return KkConfig(
            adc_rate_hz=self.resolved_adc_rate_hz(),
            upsample_factor=self.upsample_factor,
            log_floor=self.log_floor,
            symbol_rate_hz=self.baud_hz,
        )

    def tx_config(self, ratio: float = 0.0) -> TxConfig:
        if self.scheme == LinkSchemeKind.TWO_SIDED_POL_MUX:
            return TxConfig(
                scheme=Scheme.TWO_SIDED,
                bias_power_ratio=0.0,
                gap_hz=self.gap_hz,
                grid_spacing_hz=self.spacing_hz,
                interleaver=self.interleaver,
                interleaver_offset_hz=self.interleaver_offset_hz,
            )
        return TxConfig(scheme=Scheme.KK_PAM_SSB, bias_power_ratio=ratio, grid_spacing_hz=self.spacing_hz)


class SweepRow(BaseModel):
    axis_name: str
    axis_value: float
    bias_or_lo_ratio: float
    scheme: str
    sideband: str = NO_LANE
    polarization: str = NO_LANE
    n_bits: int
    n_errors: int
    ber: float
    min_phase_violations: int = 0
    clip_count: int = 0
    seed_base: int


class TheoryPoint(BaseModel):
    axis_name: str
    axis_value: float
    ber: float
    label: str


class SweepResult(BaseModel):
    name: str
    scheme: str
    axis_name: str
    axis_values: List[float]
    rows: List[SweepRow] = []
    theory: List[TheoryPoint] = []
    spectra: Dict[str, List[Tuple[float, float]]] = {}
    wall_time_s: float = 0.0
    seeds: List[int] = []
    timing: Dict = {}


# Key of one aggregated row: (axis index, ratio index, variant, sideband, polarization)
RowKey = Tuple[int, int, str, str, str]
JobOutput = List[Tuple[RowKey, BerReport]]


def _seed(run_seed: int, stage: int, *indices: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([run_seed, stage, *indices])


def _is_noiseless(osnr_db: float) -> bool:
    return math.isinf(osnr_db) and osnr_db > 0


def _winding_violation(x: ComplexSignal) -> int:
    try:
        return int(winding_number(x) != 0)
    except DegenerateTrajectoryError:
        return 1


def _center_channel(x: ComplexSignal, sc: LinkScenario) -> ComplexSignal:
    """Bring the measured (middle) WDM channel to the grid center"""
    offset = (sc.n_wdm // 2 - (sc.n_wdm - 1) / 2) * sc.spacing_hz
    return frequency_shift(x, -offset, snap_to_grid=True) if offset else x


@time_stage("propagate")
def _propagate(field, sc: LinkScenario, per_channel_power_w: float):
    """Linear links get the exact all-pass CD; nonlinear ones the split-step solver"""
    if not sc.nonlinear:
        if isinstance(field, DualPolSignal):
            return field.map(lambda s: apply_cd(s, sc.total_cd_ps_nm, sc.wavelength_nm))
        return apply_cd(field, sc.total_cd_ps_nm, sc.wavelength_nm)
    return propagate_link(field, sc.link_spans(), sc.step, per_channel_power_w * sc.n_wdm)


@time_stage("noise")
def _load_noise(field, sc: LinkScenario, p_signal: float, osnr_db: float, seed):
    if _is_noiseless(osnr_db):
        return field, 1.0
    return apply_noise(field, sc.noise, p_signal, seed, osnr_db)


@time_stage("receive")
def _receive_kkpam(*args, **kwargs) -> ComplexSignal:
    return receive_kkpam(*args, **kwargs)


@time_stage("receive")
def _receive_sideband(*args, **kwargs) -> ComplexSignal:
    return receive_sideband(*args, **kwargs)


@time_stage("decide")
def _decide(lane: ComplexSignal, frame: SymbolFrame, pulse: PulseShape) -> BerReport:
    return decide_and_count(lane, frame, pulse)


def _kkpam_point(noiseless: ComplexSignal, frame: SymbolFrame, pulse: PulseShape, cfg: KkConfig,
                 sc: LinkScenario, p_s: float, bias_amp: float, osnr_db: float, digital_cd: float,
                 seed, timing: RunTiming) -> BerReport:
    """Noise, receiver and decision for one KK-PAM sweep point"""
    p_signal = p_s if sc.noise.exclude_bias else p_s + bias_amp ** 2
    noisy, scale = _load_noise(noiseless, sc, p_signal, osnr_db, seed, timing=timing)
    diagnostics = ReconstructionDiagnostics()
    lane = _receive_kkpam(noisy, bias_amp * scale, cfg, sc.rx_filter, digital_cd, diagnostics,
                          timing=timing)
    report = _decide(lane, frame, pulse, timing=timing)
    report.clip_count = diagnostics.clip_count

    detected = apply_filter(noiseless, sc.rx_filter) if sc.rx_filter is not None else noiseless
    report.min_phase_violations = _winding_violation(detected)
    return report


def kkpam_job(sc: LinkScenario, ratio_index: int, run: int) -> Tuple[JobOutput, RunTiming]:
    """One bias ratio, one run: every axis point and CD-compensation variant"""
    run_seed = sc.base_seed + run
    timing = RunTiming(f"{sc.name}/ratio{ratio_index}/run{run}", run_seed)
    ratio = sc.bias_or_lo_ratio[ratio_index]
    pulse, cfg, fs = sc.pulse(), sc.kk_config(), sc.sample_rate_hz
    tx_cfg = sc.tx_config(ratio)
    center = sc.n_wdm // 2

    frames = [make_frame(sc.n_symbols, 4, _seed(run_seed, FRAME_STAGE, ch)) for ch in range(sc.n_wdm)]
    components = [kkpam_components(frame, pulse, tx_cfg, fs) for frame in frames]
    fields = [ssb.with_samples(ssb.samples + bias) for _, ssb, bias in components]
    _, ssb, bias_amp = components[center]
    p_s = measure_power(ssb)
    timing.mark("transmitted")

    outputs: JobOutput = []
    if sc.cd_sweep_ps_nm:
        for axis_index, cd in enumerate(sc.cd_sweep_ps_nm):
            dispersed = apply_cd(fields[center], cd, sc.wavelength_nm)
            report = _kkpam_point(dispersed, frames[center], pulse, cfg, sc, p_s, bias_amp, sc.osnr_db,
                                  cd, _seed(run_seed, NOISE_STAGE, axis_index), timing)
            outputs.append(((axis_index, ratio_index, CdCompensation.DIGITAL.value, NO_LANE, NO_LANE), report))
        return outputs, timing

    if sc.n_wdm > 1 or sc.nonlinear:
        channels = [polmux(f, f.with_samples(np.zeros(f.n))) for f in fields]
        composite = wdm_mux(channels, sc.spacing_hz) if sc.n_wdm > 1 else channels[0]
        per_channel_power = sc.launch_power_w
        received = _propagate(composite.x, sc, per_channel_power, timing=timing)
        received = _center_channel(received, sc)
        timing.mark("propagated")
        for axis_index, osnr in enumerate(sc.osnr_sweep_db):
            report = _kkpam_point(received, frames[center], pulse, cfg, sc, p_s, bias_amp, osnr,
                                  sc.total_cd_ps_nm, _seed(run_seed, NOISE_STAGE, axis_index), timing)
            outputs.append(((axis_index, ratio_index, CdCompensation.DIGITAL.value, NO_LANE, NO_LANE), report))
        return outputs, timing

    for variant_index, variant in enumerate(sc.cd_compensation):
        if variant == CdCompensation.OPTICAL:
            link_field, digital_cd = fields[center], 0.0
        else:
            link_field = _propagate(fields[center], sc, sc.launch_power_w, timing=timing)
            digital_cd = sc.total_cd_ps_nm
        for axis_index, osnr in enumerate(sc.osnr_sweep_db):
            report = _kkpam_point(link_field, frames[center], pulse, cfg, sc, p_s, bias_amp, osnr, digital_cd,
                                  _seed(run_seed, NOISE_STAGE, axis_index, variant_index), timing)
            outputs.append(((axis_index, ratio_index, variant.value, NO_LANE, NO_LANE), report))
    return outputs, timing


def _training_reference(branch: ComplexSignal, rx_filter: FilterSpec, cfg: KkConfig) -> ComplexSignal:
    return decimate(apply_filter(branch, rx_filter), cfg.output_rate_hz)


def tskk_job(sc: LinkScenario, run: int) -> Tuple[JobOutput, RunTiming]:
    """One run of the TS-KK link: all OSNR points and LO ratios share one propagation"""
    run_seed = sc.base_seed + run
    timing = RunTiming(f"{sc.name}/run{run}", run_seed)
    pulse, cfg, fs = sc.pulse(), sc.kk_config(), sc.sample_rate_hz
    tx_cfg = sc.tx_config()
    lower_filter, upper_filter = tx_cfg.interleaver_pair()
    sides = ("lower", "upper")
    pols = ("x", "y")
    center = sc.n_wdm // 2
    n_train = sc.n_train_symbols * cfg.output_samples_per_symbol

    frames = [
        [[make_frame(sc.n_symbols, 4, _seed(run_seed, FRAME_STAGE, ch, p, s)) for s in range(2)] for p in range(2)]
        for ch in range(sc.n_wdm)
    ]
    channels = []
    center_branches = None
    for ch in range(sc.n_wdm):
        per_pol = [two_sided_branches(frames[ch][p][0], frames[ch][p][1], pulse, tx_cfg, fs) for p in range(2)]
        if ch == center:
            center_branches = per_pol
        fields = [lo.with_samples(lo.samples + hi.samples) for lo, hi in per_pol]
        channels.append(polmux(fields[0], fields[1]))
    composite = wdm_mux(channels, sc.spacing_hz) if sc.n_wdm > 1 else channels[0]
    p_signal = channels[center].power
    timing.mark("transmitted")

    received = _propagate(composite, sc, sc.launch_power_w, timing=timing)
    received, _ = random_pol_rotation(received, _seed(run_seed, POLARIZATION_STAGE))
    received = received.map(lambda s: _center_channel(s, sc))
    timing.mark("propagated")

    rx_filters = (lower_filter, upper_filter)
    training = {
        side: tuple(_training_reference(center_branches[p][i], rx_filters[i], cfg) for p in range(2))
        for i, side in enumerate(sides)
    }
    clean_branches = [deinterleave(pol, lower_filter, upper_filter) for pol in (received.x, received.y)]
    branch_power = {
        side: float(np.mean([measure_power(clean_branches[p][i]) for p in range(2)]))
        for i, side in enumerate(sides)
    }
    violations = {}
    for r_index, ratio in enumerate(sc.bias_or_lo_ratio):
        for i, side in enumerate(sides):
            lo_amp = math.sqrt(ratio * branch_power[side])
            for p in range(2):
                violations[(r_index, side, p)] = _winding_violation(add_lo(clean_branches[p][i], lo_amp))

    outputs: JobOutput = []
    for axis_index, osnr in enumerate(sc.osnr_sweep_db):
        noisy, scale = _load_noise(received, sc, p_signal, osnr, _seed(run_seed, NOISE_STAGE, axis_index),
                                    timing=timing)
        branches = [deinterleave(pol, lower_filter, upper_filter) for pol in (noisy.x, noisy.y)]
        for r_index, ratio in enumerate(sc.bias_or_lo_ratio):
            for i, side in enumerate(sides):
                lo_amp = math.sqrt(ratio * branch_power[side]) * scale
                diagnostics = [ReconstructionDiagnostics(), ReconstructionDiagnostics()]
                fields = tuple(
                    _receive_sideband(branches[p][i], lo_amp, cfg, side, sc.total_cd_ps_nm, diagnostics[p],
                                      timing=timing)
                    for p in range(2)
                )
                demuxed = polmux_demux(fields, training[side], n_train)
                for p in range(2):
                    # the same interleaver shaped this sideband at the transmitter and the receiver
                    equalized = equalize_filters(demuxed[p], [rx_filters[i]] * 2)
                    lane = extract_real_lane(equalized, 0.0, sc.gap_hz, side)
                    report = _decide(lane, frames[center][p][i], pulse, timing=timing)
                    report.clip_count = diagnostics[p].clip_count
                    report.min_phase_violations = violations[(r_index, side, p)]
                    outputs.append(((axis_index, r_index, NO_LANE, side, pols[p]), report))
    return outputs, timing


def qam16_job(sc: LinkScenario, run: int) -> Tuple[JobOutput, RunTiming]:
    """One run of the dual-pol 16-QAM reference link with an ideal coherent receiver"""
    run_seed = sc.base_seed + run
    timing = RunTiming(f"{sc.name}/run{run}", run_seed)
    pulse, fs = sc.pulse(), sc.sample_rate_hz
    out_rate = 2 * sc.baud_hz
    center = sc.n_wdm // 2
    n_train = sc.n_train_symbols * 2

    frames = [
        [[make_frame(sc.n_symbols, 4, _seed(run_seed, FRAME_STAGE, ch, p, q)) for q in range(2)] for p in range(2)]
        for ch in range(sc.n_wdm)
    ]
    channels = [
        polmux(*(build_qam_field(frames[ch][p][0], frames[ch][p][1], pulse, fs) for p in range(2)))
        for ch in range(sc.n_wdm)
    ]
    composite = wdm_mux(channels, sc.spacing_hz) if sc.n_wdm > 1 else channels[0]
    p_signal = channels[center].power
    training = tuple(decimate(s, out_rate) for s in (channels[center].x, channels[center].y))

    received = _propagate(composite, sc, sc.launch_power_w, timing=timing)
    received, _ = random_pol_rotation(received, _seed(run_seed, POLARIZATION_STAGE))
    received = received.map(lambda s: _center_channel(s, sc))

    outputs: JobOutput = []
    for axis_index, osnr in enumerate(sc.osnr_sweep_db):
        noisy, _ = _load_noise(received, sc, p_signal, osnr, _seed(run_seed, NOISE_STAGE, axis_index), timing=timing)
        fields = tuple(
            cd_compensate(decimate(s, out_rate), sc.total_cd_ps_nm, sc.wavelength_nm) for s in (noisy.x, noisy.y)
        )
        demuxed = polmux_demux(fields, training, n_train)
        for p, pol in enumerate(("x", "y")):
            lane_i = ComplexSignal.real(demuxed[p].samples.real, out_rate)
            lane_q = ComplexSignal.real(demuxed[p].samples.imag, out_rate)
            report = BerReport.combine([
                _decide(lane_i, frames[center][p][0], pulse, timing=timing),
                _decide(lane_q, frames[center][p][1], pulse, timing=timing),
            ])
            outputs.append(((axis_index, 0, NO_LANE, NO_LANE, pol), report))
    return outputs, timing


def tx_spectra(sc: LinkScenario, resolution_hz: float = 0.5e9) -> Dict[str, List[Tuple[float, float]]]:
    """TS-KK transmitter spectra at each construction stage (real lane, gap opened, interleaved, sum)"""
    pulse, fs = sc.pulse(), sc.sample_rate_hz
    tx_cfg = sc.tx_config()
    lower_filter, upper_filter = tx_cfg.interleaver_pair()
    frame_lo = make_frame(sc.n_symbols, 4, _seed(sc.base_seed, FRAME_STAGE, 0, 0, 0))
    frame_hi = make_frame(sc.n_symbols, 4, _seed(sc.base_seed, FRAME_STAGE, 0, 0, 1))
    lane_hi = shape(frame_hi, pulse, fs)
    opened_hi = open_gap(lane_hi, sc.gap_hz)
    lower, upper = two_sided_branches(frame_lo, frame_hi, pulse, tx_cfg, fs)
    stages = OrderedDict([
        ("real_lane", lane_hi),
        ("gap_opened", opened_hi),
        ("upper_interleaved", apply_filter(opened_hi, upper_filter)),
        ("lower_interleaved", lower),
        ("two_sided", lower.with_samples(lower.samples + upper.samples)),
    ])
    out = {}
    for stage, signal in stages.items():
        freqs, power = power_spectrum(signal)
        bins = np.floor(freqs / resolution_hz).astype(np.int64)
        unique, inverse = np.unique(bins, return_inverse=True)
        summed = np.bincount(inverse, weights=power)
        out[stage] = [(float(b * resolution_hz), float(p)) for b, p in zip(unique, summed)]
    return out


class ExperimentService:
    def __init__(self, jobs: int = 1, progress: bool = True):
        self.jobs = max(1, jobs)
        self.progress = progress

    def _run_jobs(self, name: str, func, job_args: List[tuple]) -> Tuple[List[JobOutput], RunTiming]:
        sweep_timing = RunTiming(name)
        outputs: List[Optional[JobOutput]] = [None] * len(job_args)
        with tqdm(total=len(job_args), desc=name, disable=not self.progress) as bar:
            if self.jobs == 1:
                for index, args in enumerate(job_args):
                    outputs[index], job_timing = func(*args)
                    sweep_timing.merge(job_timing)
                    bar.update(1)
            else:
                with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                    futures = [pool.submit(func, *args) for args in job_args]
                    for index, future in enumerate(futures):
                        outputs[index], job_timing = future.result()
                        sweep_timing.merge(job_timing)
                        bar.update(1)
        sweep_timing.complete()
        return outputs, sweep_timing

    def _assemble(self, sc: LinkScenario, outputs: List[JobOutput], timing: RunTiming,
                  theory_kind: Optional[LinkKind], scheme_label: str, with_variant: bool) -> SweepResult:
        grouped: Dict[RowKey, List[BerReport]] = {}
        for job_output in outputs:
            for key, report in job_output:
                grouped.setdefault(key, []).append(report)

        ratios = sc.ratios()
        rows = []
        for key in sorted(grouped):
            axis_index, ratio_index, variant, sideband, pol = key
            pooled = BerReport.combine(grouped[key])
            scheme = f"{scheme_label}-{variant.lower()}" if with_variant else scheme_label
            rows.append(SweepRow(
                axis_name=sc.axis_name,
                axis_value=sc.axis_values[axis_index],
                bias_or_lo_ratio=ratios[ratio_index],
                scheme=scheme,
                sideband=sideband,
                polarization=pol,
                n_bits=pooled.n_bits,
                n_errors=pooled.n_errors,
                ber=pooled.ber,
                min_phase_violations=pooled.min_phase_violations,
                clip_count=pooled.clip_count,
                seed_base=sc.base_seed,
            ))
            if pooled.n_errors == 0 and pooled.n_bits:
                logger.debug(f"{sc.name}: zero errors in {pooled.n_bits} bits at {key}")

        theory = []
        if theory_kind is not None:
            osnr_axis = sc.osnr_sweep_db or [sc.osnr_db] * len(sc.cd_sweep_ps_nm)
            finite = [(v, o) for v, o in zip(sc.axis_values, osnr_axis) if math.isfinite(o)]
            curve = theory_curve([o for _, o in finite], theory_kind, sc.baud_hz, sc.noise.ref_bw_hz)
            theory = [
                TheoryPoint(axis_name=sc.axis_name, axis_value=v, ber=ber, label=theory_kind.value)
                for (v, _), (_, ber) in zip(finite, curve)
            ]

        logger.info(f"Sweep {sc.name} finished in {timing.get_total_time():.1f}s ({len(rows)} rows)")
        return SweepResult(
            name=sc.name,
            scheme=sc.scheme.value,
            axis_name=sc.axis_name,
            axis_values=sc.axis_values,
            rows=rows,
            theory=theory,
            spectra=tx_spectra(sc) if sc.spectra and sc.scheme == LinkSchemeKind.TWO_SIDED_POL_MUX else {},
            wall_time_s=round(timing.get_total_time(), 3),
            seeds=[sc.base_seed + run for run in range(sc.n_runs)],
            timing=timing.to_dict(),
        )

    def _require(self, sc: LinkScenario, scheme: LinkSchemeKind):
        if sc.scheme != scheme:
            raise ConfigError(f"Scenario {sc.name} has scheme {sc.scheme.value}, expected {scheme.value}")

    def run_kkpam_linear(self, sc: LinkScenario) -> SweepResult:
        """BER vs OSNR_eq for each bias ratio, optical and/or digital CD compensation"""
        self._require(sc, LinkSchemeKind.KK_PAM_SSB)
        if not sc.osnr_sweep_db:
            raise ConfigError("run_kkpam_linear sweeps OSNR; osnr_sweep_db is empty")
        if sc.nonlinear or sc.n_wdm > 1:
            raise ConfigError("run_kkpam_linear is single-channel and linear")
        job_args = [(sc, r, run) for r in range(len(sc.bias_or_lo_ratio)) for run in range(sc.n_runs)]
        outputs, timing = self._run_jobs(sc.name, kkpam_job, job_args)
        return self._assemble(sc, outputs, timing, LinkKind.KK_PAM, sc.scheme.value, with_variant=True)

    def run_kkpam_cd_sweep(self, sc: LinkScenario) -> SweepResult:
        """BER vs accumulated CD at fixed OSNR_eq, digital compensation"""
        self._require(sc, LinkSchemeKind.KK_PAM_SSB)
        if not sc.cd_sweep_ps_nm:
            raise ConfigError("run_kkpam_cd_sweep needs cd_sweep_ps_nm")
        job_args = [(sc, r, run) for r in range(len(sc.bias_or_lo_ratio)) for run in range(sc.n_runs)]
        outputs, timing = self._run_jobs(sc.name, kkpam_job, job_args)
        return self._assemble(sc, outputs, timing, LinkKind.KK_PAM, sc.scheme.value, with_variant=True)

    def run_kkpam_wdm_nonlinear(self, sc: LinkScenario) -> SweepResult:
        """Central channel of a KK-PAM WDM comb after split-step propagation"""
        self._require(sc, LinkSchemeKind.KK_PAM_SSB)
        if not sc.osnr_sweep_db:
            raise ConfigError("run_kkpam_wdm_nonlinear sweeps OSNR; osnr_sweep_db is empty")
        job_args = [(sc, r, run) for r in range(len(sc.bias_or_lo_ratio)) for run in range(sc.n_runs)]
        outputs, timing = self._run_jobs(sc.name, kkpam_job, job_args)
        return self._assemble(sc, outputs, timing, LinkKind.KK_PAM, sc.scheme.value, with_variant=True)

    def run_tskk(self, sc: LinkScenario) -> SweepResult:
        """Per-sideband, per-polarization BER of the TS-KK link for every LO ratio"""
        self._require(sc, LinkSchemeKind.TWO_SIDED_POL_MUX)
        job_args = [(sc, run) for run in range(sc.n_runs)]
        outputs, timing = self._run_jobs(sc.name, tskk_job, job_args)
        return self._assemble(sc, outputs, timing, LinkKind.TWO_SIDED_LANE, sc.scheme.value, with_variant=False)

    def run_coherent16qam_baseline(self, sc: LinkScenario) -> SweepResult:
        self._require(sc, LinkSchemeKind.COHERENT_QAM16)
        job_args = [(sc, run) for run in range(sc.n_runs)]
        outputs, timing = self._run_jobs(sc.name, qam16_job, job_args)
        return self._assemble(sc, outputs, timing, LinkKind.QAM_DUAL_POL, sc.scheme.value, with_variant=False)

    def run(self, sc: LinkScenario) -> SweepResult:
        """Dispatch a scenario to the matching experiment"""
        start = time.time()
        try:
            if sc.scheme == LinkSchemeKind.COHERENT_QAM16:
                result = self.run_coherent16qam_baseline(sc)
            elif sc.scheme == LinkSchemeKind.TWO_SIDED_POL_MUX:
                result = self.run_tskk(sc)
            elif sc.cd_sweep_ps_nm:
                result = self.run_kkpam_cd_sweep(sc)
            elif sc.n_wdm > 1 or sc.nonlinear:
                result = self.run_kkpam_wdm_nonlinear(sc)
            else:
                result = self.run_kkpam_linear(sc)
        except KkSimError as e:
            logger.error(f"Scenario {sc.name} failed after {time.time() - start:.1f}s: {str(e)}")
            raise
        return result
