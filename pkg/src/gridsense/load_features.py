"""Load-identification features: harmonic P/Q, steady-state deltas, transient band energies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .errors import AlignmentError, LengthError, ParameterError, ShapeError
from .hif_features import EPS_FLOOR, band_bin_masks, band_mean_power, default_band_plan
from .signal import Frame, SampleStream, fft_array, hann_window

MAX_ORDER = 13
TRANSIENT_LEN = 1024
LOAD_RATE_HZ = 10000.0
STEADY_CYCLES = 5
SETTLE_CYCLES = 10


@dataclass(frozen=True)
class Phasor:
    voltage_rms: float
    current_rms: float
    phase: float  # angle(V) - angle(I), wrapped to (-pi, pi]


PhasorSet = Dict[int, Phasor]


@dataclass(frozen=True)
class PowerReading:
    P: float
    Q: float


def _bin_value(x: np.ndarray, b: int) -> complex:
    n = x.shape[0]
    return complex(np.dot(x, np.exp(-2j * np.pi * b * np.arange(n) / n)))


def _wrap(angle: float) -> float:
    a = (angle + np.pi) % (2 * np.pi) - np.pi
    return float(np.pi if a == -np.pi else a)


def phasors(v_frame: Frame, i_frame: Frame, f0_hz: float = 50.0, max_order: int = MAX_ORDER) -> PhasorSet:
    """Per-harmonic RMS magnitudes and V-I phase difference.

    Reads the DFT of each (unwindowed) frame at bin ``round(k*f0/df)``;
    frames should span whole cycles of ``f0`` so the bins land on harmonics.
    """
    if v_frame.length != i_frame.length or v_frame.sample_rate_hz != i_frame.sample_rate_hz:
        raise AlignmentError("voltage and current frames are not aligned")
    n = v_frame.length
    fs = v_frame.sample_rate_hz
    df = fs / n
    if round(f0_hz / df) == 0:
        raise ParameterError(f"f0={f0_hz} Hz falls in the DC bin at resolution {df:g} Hz")
    out = {}
    for k in range(1, max_order + 1):
        b = int(round(k * f0_hz / df))
        if b >= n / 2:
            break
        V = _bin_value(v_frame.values, b)
        I = _bin_value(i_frame.values, b)
        scale = np.sqrt(2.0) / n  # peak = 2|X|/n, RMS = peak/sqrt(2)
        out[k] = Phasor(abs(V) * scale, abs(I) * scale, _wrap(np.angle(V) - np.angle(I)))
    return out


def active_reactive(ph: PhasorSet) -> PowerReading:
    """P = sum V_k I_k cos(phi_k), Q = sum V_k I_k sin(phi_k); Q > 0 for lagging current."""
    if not ph:
        raise ParameterError("empty phasor set")
    P = sum(p.voltage_rms * p.current_rms * np.cos(p.phase) for p in ph.values())
    Q = sum(p.voltage_rms * p.current_rms * np.sin(p.phase) for p in ph.values())
    return PowerReading(float(P), float(Q))


def delta_pq(before: PowerReading, after: PowerReading) -> Tuple[float, float]:
    return after.P - before.P, after.Q - before.Q


def steady_power(v: SampleStream, i: SampleStream, start: int, cycles: int = STEADY_CYCLES,
                 f0_hz: float = 50.0) -> PowerReading:
    per = int(round(v.sample_rate_hz / f0_hz))
    end = start + cycles * per
    if start < 0 or end > len(v):
        raise LengthError(f"steady window [{start}, {end}) outside stream of {len(v)}")
    vf = Frame(v.samples[start:end], v.sample_rate_hz, start)
    itf = Frame(i.samples[start:end], i.sample_rate_hz, start)
    return active_reactive(phasors(vf, itf, f0_hz))


def transition_deltas(v: SampleStream, i: SampleStream, event_index: int, f0_hz: float = 50.0,
                      steady_cycles: int = STEADY_CYCLES, settle_cycles: int = SETTLE_CYCLES,
                      pre_gap_cycles: int = 1) -> Tuple[float, float]:
    """(dP, dQ) across an event at ``event_index``.

    Before: the ``steady_cycles`` whole cycles ending ``pre_gap_cycles`` before
    the event. After: ``steady_cycles`` cycles starting ``settle_cycles`` after it.
    """
    per = int(round(v.sample_rate_hz / f0_hz))
    before = steady_power(v, i, event_index - (pre_gap_cycles + steady_cycles) * per, steady_cycles, f0_hz)
    after = steady_power(v, i, event_index + settle_cycles * per, steady_cycles, f0_hz)
    return delta_pq(before, after)


def load_band_masks(n: int = TRANSIENT_LEN, sample_rate_hz: float = LOAD_RATE_HZ) -> np.ndarray:
    """Band masks ordered as the feature vector: highest band (E1) first."""
    return band_bin_masks(n, default_band_plan(sample_rate_hz))[::-1]


def transient_band_energies(samples, sample_rate_hz: float = LOAD_RATE_HZ) -> np.ndarray:
    """E1..E7 for one or more 1024-sample transients (..., 1024) -> (..., 7)."""
    x = np.asarray(samples, dtype=float)
    if x.shape[-1] != TRANSIENT_LEN or sample_rate_hz != LOAD_RATE_HZ:
        raise ShapeError(f"transient must be {TRANSIENT_LEN} samples at {LOAD_RATE_HZ:g} Hz")
    spec = fft_array(x * hann_window(TRANSIENT_LEN))
    power = np.abs(spec) ** 2
    return np.log10(band_mean_power(power, load_band_masks()) + EPS_FLOOR)


def load_feature_vector(transient: Frame, dP: float, dQ: float) -> np.ndarray:
    """[E1..E7, dP, dQ] with E1 the 2.5-5 kHz band."""
    if transient.length != TRANSIENT_LEN or transient.sample_rate_hz != LOAD_RATE_HZ:
        raise ShapeError(f"transient must be {TRANSIENT_LEN} samples at {LOAD_RATE_HZ:g} Hz")
    energies = transient_band_energies(transient.values, transient.sample_rate_hz)
    return np.concatenate((energies, [dP, dQ]))
