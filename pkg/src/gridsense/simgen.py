"""Synthetic waveforms and power series with known ground truth.

Current/voltage generators return :class:`SampleStream`; appliance activity
lives at one sample per 6 s. Every generator is a pure function of its
parameters and seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import resample_poly

from .events import extract_transient
from .errors import DomainError, LengthError, ParameterError
from .hif_features import MAP_SPAN, window_feature_map
from .load_features import LOAD_RATE_HZ, load_feature_vector, transition_deltas
from .pq import fit_harmonics
from .signal import SampleStream, rms

F0 = 50.0
LOW_RATE_PERIOD_S = 6.0


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _time(n: int, fs: float) -> np.ndarray:
    return np.arange(n) / fs


def add_noise_snr(x: np.ndarray, snr_db: Optional[float], rng: np.random.Generator) -> np.ndarray:
    """White Gaussian noise scaled to ``snr_db`` below the signal power."""
    if snr_db is None:
        return x
    p = float(np.mean(x * x))
    return x + rng.standard_normal(x.shape) * np.sqrt(p / 10 ** (snr_db / 10))


def gen_load_current(rms_amps: float, f0_hz: float = F0, duration_s: float = 1.0,
                     noise_snr_db: Optional[float] = None, seed=0, sample_rate_hz: float = 20000.0,
                     phase: float = 0.0, harmonics: Optional[Dict[int, float]] = None) -> SampleStream:
    """Sinusoidal load current (optionally with relative harmonics) plus noise."""
    if rms_amps <= 0 or f0_hz <= 0 or duration_s <= 0:
        raise ParameterError("rms, frequency and duration must be positive")
    n = int(round(duration_s * sample_rate_hz))
    t = _time(n, sample_rate_hz)
    x = np.sin(2 * np.pi * f0_hz * t + phase)
    for k, rel in (harmonics or {}).items():
        if k * f0_hz >= 0.45 * sample_rate_hz:
            raise ParameterError(f"harmonic {k} is above 0.45*fs")
        x = x + rel * np.sin(2 * np.pi * k * f0_hz * t + k * phase)
    x *= rms_amps / np.sqrt(np.mean(x * x)) if harmonics else rms_amps * np.sqrt(2.0)
    return SampleStream(add_noise_snr(x, noise_snr_db, _rng(seed)), sample_rate_hz, "current")


def gen_voltage(rms_volts: float = 230.0, f0_hz: float = F0, duration_s: float = 1.0,
                sample_rate_hz: float = 20000.0, phase: float = 0.0, envelope=None,
                noise_snr_db: Optional[float] = None, seed=0) -> SampleStream:
    """Sinusoidal voltage; ``envelope`` (array or callable of time) scales the amplitude."""
    n = int(round(duration_s * sample_rate_hz))
    t = _time(n, sample_rate_hz)
    x = rms_volts * np.sqrt(2.0) * np.sin(2 * np.pi * f0_hz * t + phase)
    if envelope is not None:
        x = x * (envelope(t) if callable(envelope) else np.asarray(envelope, dtype=float))
    return SampleStream(add_noise_snr(x, noise_snr_db, _rng(seed)), sample_rate_hz, "voltage")


def rms_envelope(duration_s: float, sample_rate_hz: float, segments: Sequence[Tuple[float, float, float]]):
    """Piecewise-constant RMS fraction: ``segments`` of (start_s, end_s, level) over a base of 1."""
    n = int(round(duration_s * sample_rate_hz))
    env = np.ones(n)
    for a, b, level in segments:
        env[int(round(a * sample_rate_hz)):int(round(b * sample_rate_hz))] = level
    return env


# --- high-impedance fault ---------------------------------------------------------

@dataclass(frozen=True)
class HifModelParams:
    """Two-diode arc model: conduction past unequal DC sources through variable resistors.

    Jitter entries are relative half-widths: each half cycle draws
    ``V * (1 + U(-j, j))``. ``buildup`` multiplies both resistances after every
    conducted cycle, never dropping below ``buildup_floor`` times the start.
    """

    V_p: float = 4000.0
    V_n: float = 4500.0
    R_p: float = 30000.0
    R_n: float = 32000.0
    v_jitter: float = 0.0
    r_jitter: float = 0.0
    intermittence: float = 0.0
    buildup: float = 1.0
    buildup_floor: float = 0.5

    def __post_init__(self):
        if min(self.V_p, self.V_n, self.R_p, self.R_n) <= 0:
            raise ParameterError("HIF sources and resistances must be positive")
        if not 0.0 <= self.intermittence <= 1.0:
            raise ParameterError("intermittence must be a probability")
        if not 0.0 < self.buildup <= 1.0:
            raise ParameterError("buildup decay must lie in (0, 1]")
        if not (0.0 <= self.v_jitter < 1.0 and 0.0 <= self.r_jitter < 1.0):
            raise ParameterError("jitter half-widths must lie in [0, 1)")
        if not 0.0 < self.buildup_floor <= 1.0:
            raise ParameterError("buildup floor must lie in (0, 1]")


# Contact-surface presets differ in source asymmetry, jitter and intermittence.
SURFACES: Dict[str, dict] = {
    "tree": dict(v_jitter=0.05, r_jitter=0.25, intermittence=0.02, buildup=0.98, asym=(0.02, 0.10)),
    "sand": dict(v_jitter=0.15, r_jitter=0.15, intermittence=0.20, buildup=1.0, asym=(0.05, 0.25)),
    "soil": dict(v_jitter=0.10, r_jitter=0.10, intermittence=0.08, buildup=0.995, asym=(0.03, 0.15)),
}


def _half_cycles(v: np.ndarray) -> List[Tuple[int, int]]:
    """Sample spans between sign changes of the drive voltage."""
    sign = np.signbit(v)
    edges = np.flatnonzero(sign[1:] != sign[:-1]) + 1
    bounds = np.concatenate(([0], edges, [len(v)]))
    return list(zip(bounds[:-1], bounds[1:]))


def gen_hif(params: HifModelParams, drive_voltage: SampleStream, seed=0) -> SampleStream:
    """Fault current for an ideal-diode two-source arc model.

    Positive half cycles conduct through (V_p, R_p), negative ones through
    (V_n, R_n); inside (-V_n, V_p) the current is exactly zero. Sources and
    resistances are re-drawn every half cycle, whole cycles drop out with the
    intermittence probability and resistances decay by ``buildup`` per
    conducting cycle.
    """
    rng = _rng(seed)
    v = drive_voltage.samples
    p = params
    if np.max(np.abs(v)) <= max(p.V_p, p.V_n):
        warnings.warn("drive voltage never exceeds the arc sources; no conduction", RuntimeWarning)
    i = np.zeros_like(v)
    scale = 1.0
    cycle_on = True
    cycle_conducted = False
    for a, b in _half_cycles(v):
        seg = v[a:b]
        positive = seg[np.argmax(np.abs(seg))] >= 0
        if positive:
            # a cycle starts at each positive half: decide intermittence, apply build-up
            if cycle_conducted:
                scale = max(scale * p.buildup, p.buildup_floor)
            cycle_on = rng.random() >= p.intermittence
            cycle_conducted = False
        vj = 1.0 + rng.uniform(-p.v_jitter, p.v_jitter)
        rj = 1.0 + rng.uniform(-p.r_jitter, p.r_jitter)
        if not cycle_on:
            continue
        if positive:
            src, res = p.V_p * vj, p.R_p * rj * scale
            cur = np.where(seg > src, (seg - src) / res, 0.0)
        else:
            src, res = p.V_n * vj, p.R_n * rj * scale
            cur = np.where(seg < -src, (seg + src) / res, 0.0)
        i[a:b] = cur
        cycle_conducted = cycle_conducted or bool(np.any(cur != 0))
    return SampleStream(i, drive_voltage.sample_rate_hz, "current")


def random_hif_params(surface: str, drive_peak: float, rng: np.random.Generator,
                      peak_current: Tuple[float, float] = (0.014, 0.28)) -> HifModelParams:
    """Draw a surface-flavoured parameter set producing a 0.01-0.2 A (RMS-ish) fault."""
    preset = SURFACES[surface]
    base = drive_peak * rng.uniform(0.3, 0.7)
    lo, hi = preset["asym"]
    asym = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
    v_p, v_n = base * (1 + asym / 2), base * (1 - asym / 2)
    i_pk = rng.uniform(*peak_current)
    r_p = (drive_peak - v_p) / i_pk
    r_n = (drive_peak - v_n) / i_pk * rng.uniform(0.9, 1.1)
    return HifModelParams(v_p, v_n, r_p, r_n, preset["v_jitter"], preset["r_jitter"],
                          preset["intermittence"], preset["buildup"], 0.5)


def superimpose(fault: SampleStream, load_rms_ratio: float, phase_locked: bool = True, seed=0,
                f0_hz: float = F0) -> SampleStream:
    """Fault plus a 50 Hz load sinusoid whose RMS is ``ratio`` times the fault RMS.

    With ``phase_locked`` the load shares the phase of the fault fundamental.
    """
    if load_rms_ratio <= 0:
        raise ParameterError("load ratio must be positive")
    return SampleStream(fault.samples + load_component(fault, load_rms_ratio, phase_locked, seed, f0_hz),
                        fault.sample_rate_hz, "current")


def load_component(fault: SampleStream, load_rms_ratio: float, phase_locked: bool = True, seed=0,
                   f0_hz: float = F0) -> np.ndarray:
    x = fault.samples
    fs = fault.sample_rate_hz
    t = _time(len(x), fs)
    fault_rms = rms(x)
    if fault_rms == 0:
        amp, phase = 1.0, 0.0
    else:
        amp = load_rms_ratio * fault_rms * np.sqrt(2.0)
        if phase_locked:
            a1 = fit_harmonics(x, fs, f0_hz)[0]
            phase = float(np.angle(a1)) + np.pi / 2  # cos reference -> sin reference
        else:
            phase = _rng(seed).uniform(0, 2 * np.pi)
    return amp * np.sin(2 * np.pi * f0_hz * t + phase)


# --- switching transients -------------------------------------------------------

TRANSIENT_KINDS = ("capacitor_switching", "magnetizing_inrush", "resistive_step", "motor_start")


@dataclass(frozen=True)
class TransientKind:
    kind: str
    amplitude: Optional[float] = None        # relative to base peak; drawn when None
    ring_hz: Optional[float] = None          # capacitor ring frequency
    tau_s: Optional[float] = None            # decay time constant
    step_factor: float = 2.0                 # resistive step amplitude multiplier
    cycles: Optional[int] = None             # inrush length in cycles

    def __post_init__(self):
        if self.kind not in TRANSIENT_KINDS:
            raise ParameterError(f"unknown transient kind {self.kind!r}")


def _base_peak(base: np.ndarray) -> float:
    return float(np.sqrt(2.0) * rms(base)) if base.size else 1.0


def _ramp(n: int, start: int, width: int) -> np.ndarray:
    """0 before ``start``, raised-cosine rise over ``width`` samples, 1 after."""
    r = np.clip((np.arange(n) - start) / max(width, 1), 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * r)


def transient_template(kind: TransientKind, at_sample: int, base: SampleStream, seed=0,
                       f0_hz: float = F0) -> np.ndarray:
    rng = _rng(seed)
    x = base.samples
    fs = base.sample_rate_hz
    n = len(x)
    if not 0 <= at_sample < n:
        raise LengthError(f"event sample {at_sample} outside stream of {n}")
    t = (np.arange(n) - at_sample) / fs
    after = t >= 0
    peak = _base_peak(x) or 1.0
    w = 2 * np.pi * f0_hz
    if kind.kind == "capacitor_switching":
        ring = kind.ring_hz or rng.uniform(1000.0, 3000.0)
        if ring >= 0.45 * fs:
            raise DomainError("ring frequency must stay below 0.45*fs")
        tau = kind.tau_s or rng.uniform(0.002, 0.010)
        amp = (kind.amplitude or rng.uniform(0.5, 1.5)) * peak
        phi = rng.uniform(0, 2 * np.pi)
        # smooth onset over a quarter ring period keeps the burst band-limited
        onset = _ramp(n, at_sample, int(fs / ring / 4))
        return amp * onset * np.exp(-np.maximum(t, 0) / tau) * np.sin(2 * np.pi * ring * t + phi) * after
    if kind.kind == "magnetizing_inrush":
        cycles = kind.cycles or int(rng.integers(5, 21))
        tau = kind.tau_s or cycles / f0_hz / 3.0
        amp = (kind.amplitude or rng.uniform(2.0, 5.0)) * peak
        phi = rng.uniform(0, 2 * np.pi)
        pulses = np.maximum(np.sin(w * t + phi), 0.0) ** 3
        return amp * pulses * np.exp(-np.maximum(t, 0) / tau) * (t < cycles / f0_hz) * after
    if kind.kind == "resistive_step":
        return (kind.step_factor - 1.0) * x * _ramp(n, at_sample, int(fs / 2000))
    # motor start: decaying inrush riding a new running current, then a sub-harmonic swing
    amp = (kind.amplitude or rng.uniform(0.5, 1.0)) * peak
    tau = kind.tau_s or rng.uniform(0.05, 0.2)
    phi = rng.uniform(0, 2 * np.pi)
    envelope = 1.0 + rng.uniform(3.0, 6.0) * np.exp(-np.maximum(t, 0) / tau)
    settle = 0.2 * np.exp(-np.maximum(t, 0) / (3 * tau)) * np.sin(w / 2 * t)
    return amp * (envelope + settle) * np.sin(w * t + phi) * _ramp(n, at_sample, int(fs / 2000))


def gen_transient(kind: TransientKind, at_sample: int, base: SampleStream, seed=0,
                  f0_hz: float = F0) -> SampleStream:
    return base.with_samples(base.samples + transient_template(kind, at_sample, base, seed, f0_hz))


# --- HIF classification corpus -----------------------------------------------------

OVERSAMPLE = 4
HIF_RATE_HZ = 20000.0
LABELS3 = ("HIF", "transient", "normal")


@dataclass
class HifCorpus:
    maps: np.ndarray            # (N, 8, 6)
    labels3: np.ndarray         # 0 HIF, 1 transient, 2 normal
    groups: np.ndarray          # generation group (for leakage-free splits)
    meta: List[dict]

    @property
    def labels2(self) -> np.ndarray:
        """0 HIF, 1 healthy (normal and transient pooled)."""
        return np.where(self.labels3 == 0, 0, 1)


def _decimate(x: np.ndarray) -> np.ndarray:
    return resample_poly(x, 1, OVERSAMPLE)


def _healthy_load(n: int, fs: float, amp: float, rng, phase: float) -> np.ndarray:
    t = _time(n, fs)
    w = 2 * np.pi * F0
    x = amp * np.sin(w * t + phase)
    for k in (3, 5, 7):
        if rng.random() < 0.6:
            x += amp * rng.uniform(0.0, 0.03) * np.sin(k * (w * t + phase) + rng.uniform(0, 2 * np.pi))
    return x


def hif_window(label: str, rng: np.random.Generator, surface: Optional[str] = None,
               ratio: Optional[float] = None, snr_db: Tuple[float, float] = (40.0, 60.0),
               span: int = MAP_SPAN) -> Tuple[np.ndarray, dict]:
    """One 20 kHz current window of ``span`` samples with its generation metadata.

    The waveform is synthesised at 80 kHz, noise is added there, and the
    result is decimated so the stream is band-limited like an anti-aliased DAQ.
    """
    fs_hi = HIF_RATE_HZ * OVERSAMPLE
    guard = 2000
    n_hi = span * OVERSAMPLE + 2 * guard
    phase = rng.uniform(0, 2 * np.pi)
    meta: dict = {"label": label}
    if label == "HIF":
        surface = surface or str(rng.choice(list(SURFACES)))
        ratio = ratio or float(rng.choice([5.0, 10.0, 20.0]))
        drive_rms = rng.uniform(2000.0, 11000.0)
        drive = gen_voltage(drive_rms, duration_s=n_hi / fs_hi, sample_rate_hz=fs_hi, phase=phase)
        params = random_hif_params(surface, drive_rms * np.sqrt(2.0), rng)
        fault = gen_hif(params, drive, seed=int(rng.integers(2 ** 31)))
        x = fault.samples + load_component(fault, ratio, True)
        meta.update(surface=surface, ratio=ratio)
    else:
        amp = _load_amplitude(rng)
        x = _healthy_load(n_hi, fs_hi, amp, rng, phase)
        if label == "transient":
            kind = str(rng.choice(TRANSIENT_KINDS))
            at = guard + int(rng.uniform(0.15, 0.85) * span * OVERSAMPLE)
            base = SampleStream(x, fs_hi, "current")
            x = gen_transient(TransientKind(kind), at, base, seed=int(rng.integers(2 ** 31))).samples
            meta.update(kind=kind)
    x = add_noise_snr(x, rng.uniform(*snr_db), rng)
    y = _decimate(x)
    g = guard // OVERSAMPLE
    return y[g:g + span], meta


def _load_amplitude(rng) -> float:
    # matches the spread of HIF+load peaks: ~0.01-0.2 A faults times ratios 5-20
    return float(np.exp(rng.uniform(np.log(0.05), np.log(6.0))))


def gen_hif_windows(per_class: int = 2000, seed=0, snr_db: Tuple[float, float] = (40.0, 60.0)):
    """Balanced raw windows: ``(windows (N, 1792), labels3, meta)``.

    HIF windows cycle through every surface x ratio combination.
    """
    rng = _rng(seed)
    combos = [(s, r) for s in SURFACES for r in (5.0, 10.0, 20.0)]
    windows, labels, meta = [], [], []
    for i in range(per_class):
        for lab_idx, label in enumerate(LABELS3):
            surface, ratio = combos[i % len(combos)] if label == "HIF" else (None, None)
            x, m = hif_window(label, rng, surface, ratio, snr_db)
            windows.append(x)
            labels.append(lab_idx)
            meta.append(m)
    return np.array(windows), np.array(labels), meta


def gen_hif_corpus(per_class: int = 2000, seed=0, snr_db: Tuple[float, float] = (40.0, 60.0)) -> HifCorpus:
    """Balanced HIF / transient / normal feature-map corpus."""
    windows, labels, meta = gen_hif_windows(per_class, seed, snr_db)
    maps = window_feature_map(windows, HIF_RATE_HZ)
    return HifCorpus(maps, labels, np.arange(len(labels)), meta)


def gen_hif_stream(duration_s: float, seed=0, surface: str = "tree", ratio: float = 10.0,
                   fault_start_s: Optional[float] = None, snr_db: float = 50.0) -> SampleStream:
    """Continuous 20 kHz current: load only, with an HIF joining at ``fault_start_s``."""
    rng = _rng(seed)
    fs_hi = HIF_RATE_HZ * OVERSAMPLE
    drive_rms = rng.uniform(4000.0, 11000.0)
    drive = gen_voltage(drive_rms, duration_s=duration_s, sample_rate_hz=fs_hi)
    params = random_hif_params(surface, drive_rms * np.sqrt(2.0), rng)
    fault = gen_hif(params, drive, seed=int(rng.integers(2 ** 31)))
    load = load_component(fault, ratio, True)
    x = fault.samples.copy()
    if fault_start_s is not None:
        x[:int(round(fault_start_s * fs_hi))] = 0.0
    x = add_noise_snr(x + load, snr_db, rng)
    return SampleStream(_decimate(x), HIF_RATE_HZ, "current")


# --- load identification corpus ------------------------------------------------------

APPLIANCES = ("air_conditioner", "oven", "heater", "fan", "incandescent", "fluorescent", "laptop")


@dataclass(frozen=True)
class ApplianceSignature:
    power_w: Tuple[float, float]
    pf: Tuple[float, float]          # displacement power factor
    leading: bool
    harmonics: Dict[int, float]      # relative current harmonic magnitudes
    transient: str                   # onset behaviour


SIGNATURES: Dict[str, ApplianceSignature] = {
    "air_conditioner": ApplianceSignature((1200, 1800), (0.80, 0.88), False, {3: 0.05, 5: 0.02}, "motor"),
    "oven": ApplianceSignature((2000, 3000), (1.0, 1.0), False, {}, "step"),
    "heater": ApplianceSignature((800, 1500), (1.0, 1.0), False, {}, "step"),
    "fan": ApplianceSignature((40, 90), (0.65, 0.80), False, {3: 0.08}, "motor"),
    "incandescent": ApplianceSignature((40, 100), (1.0, 1.0), False, {}, "cold_filament"),
    "fluorescent": ApplianceSignature((18, 40), (0.85, 0.95), True, {3: 0.2, 5: 0.1, 7: 0.05}, "ring"),
    "laptop": ApplianceSignature((40, 90), (0.95, 0.99), True, {3: 0.8, 5: 0.6, 7: 0.4, 9: 0.25, 11: 0.12},
                                 "capacitor_charge"),
}


def _appliance_current(name: str, t: np.ndarray, t_on: float, v_rms: float, rng) -> Tuple[np.ndarray, float]:
    sig = SIGNATURES[name]
    w = 2 * np.pi * F0
    p = rng.uniform(*sig.power_w)
    pf = rng.uniform(*sig.pf)
    phi = np.arccos(pf) * (-1.0 if sig.leading else 1.0)  # current lags by phi
    i1 = p / (v_rms * pf)
    tt = t - t_on
    on = tt >= 0
    x = np.sin(w * t - phi)
    for k, rel in sig.harmonics.items():
        x = x + rel * np.sin(k * (w * t - phi) + rng.uniform(-0.3, 0.3))
    steady = np.sqrt(2.0) * i1 * x
    ts = np.maximum(tt, 0)
    fs = 1.0 / (t[1] - t[0])
    rise = _ramp(len(t), int(np.ceil(t_on * fs)), 3)
    if sig.transient == "motor":
        env = 1.0 + rng.uniform(3.0, 6.0) * np.exp(-ts / rng.uniform(0.05, 0.15))
        cur = steady * env * rise
    elif sig.transient == "cold_filament":
        env = 1.0 + rng.uniform(6.0, 10.0) * np.exp(-ts / rng.uniform(0.01, 0.03))
        cur = steady * env * rise
    elif sig.transient == "ring":
        f_r = rng.uniform(2000.0, 3500.0)
        ring = rng.uniform(2.0, 4.0) * np.sqrt(2.0) * i1 * np.exp(-ts / rng.uniform(0.001, 0.003)) \
            * np.sin(2 * np.pi * f_r * ts)
        cur = (steady + ring) * rise
    elif sig.transient == "capacitor_charge":
        spike = rng.uniform(10.0, 20.0) * np.sqrt(2.0) * i1 * np.exp(-ts / rng.uniform(0.0005, 0.0015))
        cur = (steady + spike) * rise
    else:
        cur = steady * rise
    return cur * on, p


@dataclass
class LoadEvent:
    voltage: SampleStream
    current: SampleStream
    event_index: int
    appliance: str
    power_w: float


def gen_load_event(appliance: str, seed=0, duration_s: float = 1.0, v_rms: float = 230.0,
                   snr_db: float = 60.0, background: bool = True) -> LoadEvent:
    """10 kHz voltage/current pair with one appliance switching on mid-record."""
    if appliance not in SIGNATURES:
        raise ParameterError(f"unknown appliance {appliance!r}")
    rng = _rng(seed)
    fs = LOAD_RATE_HZ
    n = int(round(duration_s * fs))
    t = _time(n, fs)
    w = 2 * np.pi * F0
    v = v_rms * np.sqrt(2.0) * np.sin(w * t)
    event = int(rng.integers(int(0.35 * n), int(0.5 * n)))
    cur, p = _appliance_current(appliance, t, event / fs, v_rms, rng)
    if background:
        bg_p = rng.uniform(20.0, 300.0)
        bg_phi = np.arccos(rng.uniform(0.85, 1.0))
        cur = cur + np.sqrt(2.0) * bg_p / v_rms * np.sin(w * t - bg_phi)
    cur = add_noise_snr(cur, snr_db, rng)
    v = add_noise_snr(v, 70.0, rng)
    return LoadEvent(SampleStream(v, fs, "voltage"), SampleStream(cur, fs, "current"), event, appliance, p)


def gen_switching_current(events: Sequence[Tuple[str, float]], duration_s: float = 2.0, seed=0,
                          v_rms: float = 230.0, snr_db: Optional[float] = 60.0) -> SampleStream:
    """10 kHz current with each ``(appliance, t_on_s)`` switching on at its time."""
    rng = _rng(seed)
    fs = LOAD_RATE_HZ
    t = _time(int(round(duration_s * fs)), fs)
    cur = np.zeros_like(t)
    for name, t_on in events:
        if name not in SIGNATURES:
            raise ParameterError(f"unknown appliance {name!r}")
        cur = cur + _appliance_current(name, t, t_on, v_rms, rng)[0]
    return SampleStream(add_noise_snr(cur, snr_db, rng), fs, "current")


def load_event_features(ev: LoadEvent, event_index: Optional[int] = None) -> np.ndarray:
    idx = ev.event_index if event_index is None else event_index
    dp, dq = transition_deltas(ev.voltage, ev.current, idx)
    return load_feature_vector(extract_transient(ev.current, idx), dp, dq)


def gen_load_corpus(per_class: int = 200, seed=0) -> Tuple[np.ndarray, np.ndarray]:
    """(features (N, 9), labels) over the seven appliance classes."""
    rng = _rng(seed)
    feats, labels = [], []
    for i in range(per_class):
        for c, name in enumerate(APPLIANCES):
            ev = gen_load_event(name, seed=int(rng.integers(2 ** 63)))
            feats.append(load_event_features(ev))
            labels.append(c)
    return np.array(feats), np.array(labels)


# --- appliance activations and aggregate windows ------------------------------------------

@dataclass(frozen=True)
class ApplianceProfile:
    id: str
    states: Tuple[Tuple[float, Tuple[float, float]], ...]   # (watts, (min_s, max_s))
    periodic: bool = False

    def __post_init__(self):
        if not self.states:
            raise ParameterError("profile needs at least one state")
        for pw, (lo, hi) in self.states:
            if pw < 0 or lo <= 0 or hi < lo:
                raise ParameterError(f"bad state ({pw}, ({lo}, {hi}))")


def kettle_profile(power_w: float = 2000.0, duration_s=(120.0, 300.0)) -> ApplianceProfile:
    d = (duration_s, duration_s) if np.isscalar(duration_s) else tuple(duration_s)
    return ApplianceProfile("kettle", ((power_w, d),))


def fridge_profile(on_w: float = 90.0, on_s=(600.0, 600.0), off_s=(1400.0, 1400.0)) -> ApplianceProfile:
    return ApplianceProfile("fridge", ((on_w, on_s), (0.0, off_s)), periodic=True)


def microwave_profile(power_w: float = 1200.0) -> ApplianceProfile:
    return ApplianceProfile("microwave", ((power_w, (60.0, 240.0)), (power_w * 0.5, (12.0, 60.0)),
                                          (power_w, (30.0, 120.0))))


def dishwasher_profile() -> ApplianceProfile:
    return ApplianceProfile("dishwasher", ((60.0, (300.0, 600.0)), (1800.0, (600.0, 900.0)),
                                           (120.0, (900.0, 1500.0)), (1800.0, (300.0, 600.0)),
                                           (30.0, (300.0, 600.0))))


def washing_machine_profile() -> ApplianceProfile:
    return ApplianceProfile("washing_machine", ((2000.0, (600.0, 1200.0)), (250.0, (1200.0, 2400.0)),
                                                (450.0, (300.0, 600.0)), (120.0, (300.0, 600.0))))


BUILTIN_PROFILES = {"kettle": kettle_profile, "fridge": fridge_profile, "microwave": microwave_profile,
                    "dishwasher": dishwasher_profile, "washing_machine": washing_machine_profile}


def gen_activation(profile: ApplianceProfile, seed=0, duration_s: Optional[float] = None,
                   period_s: float = LOW_RATE_PERIOD_S) -> np.ndarray:
    """Walk the profile's states with seeded durations, one sample per ``period_s``.

    Periodic profiles repeat until ``duration_s`` (default: one pass);
    state durations are rounded to whole samples (at least one).
    """
    rng = _rng(seed)
    out: List[np.ndarray] = []
    total = 0
    limit = None if duration_s is None else int(round(duration_s / period_s))
    while True:
        for power, (lo, hi) in profile.states:
            n = max(1, int(round(rng.uniform(lo, hi) / period_s)))
            out.append(np.full(n, float(power)))
            total += n
            if limit is not None and total >= limit:
                return np.concatenate(out)[:limit]
        if not profile.periodic or limit is None:
            return np.concatenate(out)


@dataclass
class DisaggWindow:
    aggregate: np.ndarray
    target: np.ndarray
    appliance_id: str
    normalization: Optional[Tuple[float, float]] = None
    components: Dict[str, np.ndarray] = field(default_factory=dict)
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.aggregate) != len(self.target):
            raise LengthError("aggregate and target lengths differ")


def gen_aggregate(activations: Dict[str, np.ndarray], length: int, target_id: str,
                  include_target: bool = True, noise_std: float = 10.0, base_load: float = 100.0,
                  seed=0) -> DisaggWindow:
    """Randomly shifted activations summed with base load and noise.

    ``noise`` = base load + Gaussian noise clipped at zero, so the aggregate is
    exactly the sum of the stored components plus ``noise``.
    """
    rng = _rng(seed)
    comps: Dict[str, np.ndarray] = {}
    for name, act in activations.items():
        act = np.asarray(act, dtype=float)
        if len(act) > length:
            raise LengthError(f"activation {name} ({len(act)}) longer than the window ({length})")
        if name == target_id and not include_target:
            continue
        y = np.zeros(length)
        off = int(rng.integers(0, length - len(act) + 1))
        y[off:off + len(act)] = act
        comps[name] = y
    noise = np.maximum(base_load + noise_std * rng.standard_normal(length), 0.0)
    agg = noise.copy()
    for y in comps.values():
        agg = agg + y
    target = comps.get(target_id, np.zeros(length))
    return DisaggWindow(agg, target.copy(), target_id, None, comps, noise)


def gen_disagg_corpus(target: str = "kettle", windows: int = 2000, length: int = 128, seed=0,
                      target_fraction: float = 0.5) -> List[DisaggWindow]:
    """Windows for one target appliance; about ``target_fraction`` contain it."""
    rng = _rng(seed)
    out = []
    max_s = length * LOW_RATE_PERIOD_S
    for w in range(windows):
        acts: Dict[str, np.ndarray] = {}
        include = rng.random() < target_fraction
        for name in BUILTIN_PROFILES:
            s = int(rng.integers(2 ** 63))
            if name == target:
                prof = _random_profile(name, rng)
            elif rng.random() < 0.5:
                prof = _random_profile(name, rng)
            else:
                continue
            act = gen_activation(prof, s, duration_s=max_s if prof.periodic else None)
            if len(act) > length:
                start = int(rng.integers(0, len(act) - length + 1))
                act = act[start:start + length]
            acts[name] = act
        out.append(gen_aggregate(acts, length, target, include, noise_std=rng.uniform(5.0, 20.0),
                                 base_load=rng.uniform(50.0, 200.0), seed=int(rng.integers(2 ** 63))))
    return out


def _random_profile(name: str, rng) -> ApplianceProfile:
    if name == "kettle":
        return kettle_profile(rng.uniform(2000.0, 3000.0))
    if name == "fridge":
        return fridge_profile(rng.uniform(70.0, 120.0), (480.0, 900.0), (900.0, 1800.0))
    if name == "microwave":
        return microwave_profile(rng.uniform(900.0, 1500.0))
    return BUILTIN_PROFILES[name]()


# Typical uses per day for the continuous household series.
DAILY_USES = {"kettle": 6.0, "microwave": 2.0, "dishwasher": 0.7, "washing_machine": 0.5}


@dataclass
class HouseSeries:
    aggregate: np.ndarray
    components: Dict[str, np.ndarray]
    noise: np.ndarray
    period_s: float = LOW_RATE_PERIOD_S


def gen_house_series(days: float = 1.0, seed=0, uses: Optional[Dict[str, float]] = None,
                     noise_std: float = 10.0) -> HouseSeries:
    """Continuous low-rate household aggregate with per-appliance ground truth.

    The fridge cycles all day; other appliances start at uniformly random
    times with a Poisson number of uses. Overlapping uses of one appliance add.
    """
    rng = _rng(seed)
    n = int(round(days * 86400 / LOW_RATE_PERIOD_S))
    uses = DAILY_USES if uses is None else uses
    comps: Dict[str, np.ndarray] = {}
    fridge = gen_activation(_random_profile("fridge", rng), int(rng.integers(2 ** 63)),
                            duration_s=n * LOW_RATE_PERIOD_S)
    comps["fridge"] = fridge[:n]
    for name, per_day in uses.items():
        y = np.zeros(n)
        for _ in range(int(rng.poisson(per_day * days))):
            act = gen_activation(_random_profile(name, rng), int(rng.integers(2 ** 63)))[:n]
            start = int(rng.integers(0, n - len(act) + 1))
            y[start:start + len(act)] += act
        comps[name] = y
    # slowly varying base load plus white noise
    t = np.arange(n) * LOW_RATE_PERIOD_S / 86400
    base = 120.0 + 60.0 * np.sin(2 * np.pi * (t + rng.uniform())) + 20.0 * rng.standard_normal()
    noise = np.maximum(base + noise_std * rng.standard_normal(n), 0.0)
    agg = noise.copy()
    for y in comps.values():
        agg = agg + y
    return HouseSeries(agg, comps, noise)


def house_windows(house: HouseSeries, target: str, length: int = 128, hop: Optional[int] = None) -> List[DisaggWindow]:
    """Windows cut from a continuous household series at natural appliance prevalence."""
    hop = hop or length
    y = house.components.get(target, np.zeros_like(house.aggregate))
    out = []
    for s in range(0, len(house.aggregate) - length + 1, hop):
        comps = {k: v[s:s + length] for k, v in house.components.items()}
        out.append(DisaggWindow(house.aggregate[s:s + length].copy(), y[s:s + length].copy(), target, None,
                                comps, house.noise[s:s + length].copy()))
    return out


def gen_mixed_disagg_corpus(target: str = "kettle", windows: int = 8000, length: int = 128,
                            seed=0) -> List[DisaggWindow]:
    """Half household-series windows, half random superpositions (half of those without the target)."""
    rng = _rng(seed)
    real: List[DisaggWindow] = []
    while len(real) < windows // 2:
        house = gen_house_series(7.0, int(rng.integers(2 ** 63)))
        real.extend(house_windows(house, target, length, hop=length // 2))
    real = real[:windows // 2]
    aug = gen_disagg_corpus(target, windows - len(real), length, int(rng.integers(2 ** 63)))
    mixed = real + aug
    order = rng.permutation(len(mixed))
    return [mixed[i] for i in order]
