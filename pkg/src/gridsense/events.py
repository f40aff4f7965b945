"""Switching-transient detection.

Two detectors are provided. ``detect_changepoints`` runs an exact penalised
segmentation on the empirical power of a frame (suited to large loads whose
start-up visibly changes RMS). ``wavelet_event_detect`` watches the top
half-band of the current for bursts (suited to small loads that the RMS
barely notices).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import BoundaryError, LengthError, ParameterError
from .signal import Frame, SampleStream
from .wavelet import WaveletFilterPair, db9, highband_extract

MS_FLOOR = 1e-20
TIE_TOL = 1e-9
EDGE_PAD = 256    # samples added at each end before the high-band split


@dataclass(frozen=True)
class ChangepointConfig:
    beta: Optional[float] = None  # None -> 2*ln(n)
    min_segment: int = 2
    max_changepoints: Optional[int] = None

    def __post_init__(self):
        if self.min_segment < 2:
            raise ParameterError("min_segment must be >= 2")
        if self.beta is not None and self.beta < 0:
            raise ParameterError("beta must be nonnegative")
        if self.max_changepoints is not None and self.max_changepoints < 0:
            raise ParameterError("max_changepoints must be >= 0")


@dataclass
class ChangepointResult:
    changepoints: List[int]
    total_cost: float
    beta: float

    @property
    def K(self) -> int:
        return len(self.changepoints)


def segment_cost(x) -> float:
    """``len * ln(mean(x**2))`` with the mean square floored at 1e-20."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise LengthError("segment_cost of an empty segment")
    ms = max(float(np.mean(x * x)), MS_FLOOR)
    return x.size * math.log(ms)


def _cost_table(x: np.ndarray, min_segment: int) -> np.ndarray:
    """C[s, t] = cost of x[s:t]; +inf where t - s < min_segment."""
    n = x.shape[0]
    csum = np.concatenate(([0.0], np.cumsum(x * x)))
    s = np.arange(n + 1)[:, None]
    t = np.arange(n + 1)[None, :]
    length = t - s
    valid = length >= min_segment
    with np.errstate(divide="ignore", invalid="ignore"):
        ms = (csum[None, :] - csum[:, None]) / np.where(valid, length, 1)
        cost = length * np.log(np.maximum(ms, MS_FLOOR))
    return np.where(valid, cost, np.inf)


def _better(a_cost, a_k, b_cost, b_k) -> bool:
    """Is (a_cost, a_k) strictly preferable to (b_cost, b_k)?"""
    scale = max(1.0, abs(a_cost), abs(b_cost))
    if a_cost < b_cost - TIE_TOL * scale:
        return True
    if a_cost > b_cost + TIE_TOL * scale:
        return False
    return a_k < b_k


def _same(a_cost, b_cost) -> bool:
    return abs(a_cost - b_cost) <= TIE_TOL * max(1.0, abs(a_cost), abs(b_cost))


def detect_changepoints(frame, config: ChangepointConfig = ChangepointConfig()) -> ChangepointResult:
    """Exact minimiser of ``sum(segment costs) + beta*K``.

    Ties prefer fewer changepoints, then the lexicographically earliest
    positions. A changepoint ``k`` marks the first sample of a new segment.
    """
    x = np.asarray(frame.values if isinstance(frame, Frame) else frame, dtype=float)
    n = x.shape[0]
    m = config.min_segment
    if n < 2 * m:
        raise LengthError(f"frame of {n} samples is shorter than 2*min_segment={2 * m}")
    beta = 2.0 * math.log(n) if config.beta is None else float(config.beta)
    cost = _cost_table(x, m)
    if config.max_changepoints is None:
        cps, total = _solve_penalised(cost, n, m, beta)
    else:
        cps, total = _solve_bounded(cost, n, m, beta, config.max_changepoints)
    return ChangepointResult(cps, total, beta)


def _solve_penalised(cost, n, m, beta):
    # best[s] = optimal (cost, K) for segmenting x[s:n]; solved right to left
    best_cost = np.full(n + 1, np.inf)
    best_k = np.zeros(n + 1, dtype=np.int64)
    best_cost[n] = 0.0
    for s in range(n - m, -1, -1):
        ts = np.arange(s + m, n + 1)
        tails = best_cost[ts] + np.where(ts < n, beta, 0.0)
        totals = cost[s, ts] + tails
        ks = best_k[ts] + (ts < n)
        i = _pick(totals, ks)
        best_cost[s], best_k[s] = totals[i], ks[i]
    # forward walk picking the earliest next boundary that stays optimal
    cps, s = [], 0
    while s < n:
        target_c, target_k = best_cost[s], best_k[s]
        for t in range(s + m, n + 1):
            if not np.isfinite(best_cost[t]):
                continue
            c = cost[s, t] + best_cost[t] + (beta if t < n else 0.0)
            k = best_k[t] + (t < n)
            if k == target_k and _same(c, target_c):
                break
        if t < n:
            cps.append(t)
        s = t
    return cps, float(best_cost[0])


def _pick(totals, ks) -> int:
    finite = np.isfinite(totals)
    if not finite.any():
        return 0
    lowest = totals[finite].min()
    tol = TIE_TOL * max(1.0, abs(lowest))
    cand = np.flatnonzero(finite & (totals <= lowest + tol))
    return int(cand[np.argmin(ks[cand])])


def _solve_bounded(cost, n, m, beta, kmax):
    # tail[k][s] = optimal cost of x[s:n] split into exactly k+1 segments
    kmax = min(kmax, n // m - 1)
    tail = np.full((kmax + 1, n + 1), np.inf)
    tail[0, :] = cost[:, n]
    for k in range(1, kmax + 1):
        for s in range(0, n - (k + 1) * m + 1):
            ts = np.arange(s + m, n - k * m + 1)
            tail[k, s] = np.min(cost[s, ts] + tail[k - 1, ts])
    totals = tail[:, 0] + beta * np.arange(kmax + 1)
    best_k = _pick(totals, np.arange(kmax + 1))
    cps, s = [], 0
    for k in range(best_k, 0, -1):
        target = tail[k, s]
        for t in range(s + m, n - k * m + 1):
            if _same(cost[s, t] + tail[k - 1, t], target):
                break
        cps.append(t)
        s = t
    return cps, float(totals[best_k])


def segmentation_cost(x, changepoints: Sequence[int], beta: float) -> float:
    bounds = [0, *changepoints, len(x)]
    return sum(segment_cost(x[a:b]) for a, b in zip(bounds, bounds[1:])) + beta * len(changepoints)


# --- wavelet high-band detection -------------------------------------------------

@dataclass(frozen=True)
class WaveletDetectConfig:
    threshold_mult: float = 8.0
    smooth_window: int = 64       # stream samples
    refractory_gap: int = 2000    # stream samples
    baseline_window: int = 10000  # stream samples used for the rolling median
    baseline_step: int = 500
    floor_fraction: float = 1e-9  # absolute floor relative to mean input power
    guard_margin: int = 400       # padding applied by segment_states
    f0_hz: float = 50.0           # power frequency used to extend the stream ends


def highband_energy(stream: SampleStream, config: WaveletDetectConfig = WaveletDetectConfig(),
                    filters: Optional[WaveletFilterPair] = None):
    """Smoothed high-band energy and its detection threshold, both at stream rate."""
    x, pad = _cycle_pad(stream.samples, stream.sample_rate_hz / config.f0_hz)
    hb = highband_extract(SampleStream(x, stream.sample_rate_hz, stream.channel_label), filters or db9()).samples
    energy = np.repeat(hb * hb, 2)[pad:pad + len(stream)]
    w = max(1, config.smooth_window)
    kernel = np.ones(w) / w
    smooth = np.convolve(energy, kernel, mode="same")
    # the filter and smoothing spans at either end see past the stream and cannot be trusted
    edge = min(w + 2 * len(filters or db9()), len(smooth) // 2)
    smooth[:edge] = 0.0
    smooth[len(smooth) - edge:] = 0.0
    baseline = _rolling_median(smooth, config.baseline_window, config.baseline_step)
    floor = config.floor_fraction * float(np.mean(stream.samples ** 2))
    threshold = config.threshold_mult * baseline + floor
    return smooth, threshold


def _cycle_pad(x: np.ndarray, period: float):
    """Extend both ends by repeating the first and last whole power cycle.

    The transform is periodic, so an unextended stream wraps its end onto its
    start; continuing the waveform keeps steady signals seamless there.
    """
    per = int(round(period))
    if per < 2 or len(x) < per:
        return x, 0
    reps = -(-EDGE_PAD // per)
    head = np.tile(x[:per], reps)[-EDGE_PAD:]
    tail = np.tile(x[-per:], reps)[:EDGE_PAD]
    return np.concatenate((head, x, tail)), EDGE_PAD


def _rolling_median(x: np.ndarray, window: int, step: int) -> np.ndarray:
    n = x.shape[0]
    half = window // 2
    centers = np.arange(0, n, step)
    med = np.array([np.median(x[max(0, c - half):min(n, c + half + 1)]) for c in centers])
    return np.interp(np.arange(n), centers, med)


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    if not mask.any():
        return []
    d = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def _merge_runs(runs, gap: int):
    merged = []
    for a, b in runs:
        if merged and a - merged[-1][1] <= gap:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


def wavelet_event_detect(stream: SampleStream, threshold_mult: Optional[float] = None,
                         config: WaveletDetectConfig = WaveletDetectConfig()) -> List[int]:
    """Sample indices of high-band bursts.

    Above-threshold runs closer than the refractory gap merge into one event,
    reported at its peak of smoothed high-band energy.
    """
    if threshold_mult is not None:
        config = WaveletDetectConfig(**{**config.__dict__, "threshold_mult": threshold_mult})
    smooth, threshold = highband_energy(stream, config)
    runs = _merge_runs(_runs(smooth > threshold), config.refractory_gap)
    return [int(a + np.argmax(smooth[a:b])) for a, b in runs]


TRANSIENT_HALF = 512


def extract_transient(stream: SampleStream, event_index: int, half: int = TRANSIENT_HALF) -> Frame:
    if event_index < half or event_index > len(stream) - half:
        raise BoundaryError(f"event at {event_index} needs {half} samples either side "
                            f"in a stream of {len(stream)}")
    return Frame(stream.samples[event_index - half:event_index + half], stream.sample_rate_hz,
                 event_index - half)


@dataclass
class StateSegmentation:
    segments: List[Tuple[int, int, str]] = field(default_factory=list)

    def transients(self):
        return [(a, b) for a, b, lab in self.segments if lab == "transient"]

    def steady(self):
        return [(a, b) for a, b, lab in self.segments if lab == "steady"]


def segment_states(stream: SampleStream, config: WaveletDetectConfig = WaveletDetectConfig(),
                   f0_hz: float = 50.0) -> StateSegmentation:
    n = len(stream)
    if n < 2 * stream.sample_rate_hz / f0_hz:
        raise LengthError("segment_states needs at least two power cycles")
    smooth, threshold = highband_energy(stream, config)
    g = config.guard_margin
    padded = [(max(0, a - g), min(n, b + g)) for a, b in _runs(smooth > threshold)]
    spans = _merge_runs(padded, 0)
    segments, cursor = [], 0
    for a, b in spans:
        if a > cursor:
            segments.append((cursor, a, "steady"))
        segments.append((a, b, "transient"))
        cursor = b
    if cursor < n:
        segments.append((cursor, n, "steady"))
    return StateSegmentation(segments)


def half_cycle_rms(stream: SampleStream, f0_hz: float = 50.0) -> np.ndarray:
    """RMS over consecutive non-overlapping half cycles (trailing remainder dropped)."""
    half = int(round(stream.sample_rate_hz / (2 * f0_hz)))
    n = len(stream) // half
    if n < 1:
        raise LengthError("stream is shorter than half a power cycle")
    x = stream.samples[:n * half].reshape(n, half)
    return np.sqrt(np.mean(x * x, axis=1))


def rms_changepoints(stream: SampleStream, config: ChangepointConfig = ChangepointConfig(), f0_hz: float = 50.0,
                     block: int = 2000) -> List[int]:
    """Changepoints of the half-cycle RMS series, as stream sample indices.

    Long series are segmented in independent blocks of ``block`` half cycles
    to bound the quadratic cost table.
    """
    half = int(round(stream.sample_rate_hz / (2 * f0_hz)))
    r = half_cycle_rms(stream, f0_hz)
    out: List[int] = []
    for start in range(0, r.shape[0], block):
        seg = r[start:start + block]
        if seg.shape[0] < 2 * config.min_segment:
            break
        out.extend((start + k) * half for k in detect_changepoints(seg, config).changepoints)
    return out


def detect_events(stream: SampleStream, changepoint: ChangepointConfig = ChangepointConfig(),
                  wavelet: WaveletDetectConfig = WaveletDetectConfig(), f0_hz: float = 50.0) -> List[int]:
    """Union of wavelet and RMS-changepoint events.

    A changepoint within the refractory gap of a wavelet event is the same
    event and the wavelet index (peak of high-band energy) is kept.
    """
    gap = wavelet.refractory_gap
    wav = wavelet_event_detect(stream, config=wavelet)
    events = list(wav)
    last_cp = None
    for k in rms_changepoints(stream, changepoint, f0_hz):
        if any(abs(k - w) <= gap for w in wav) or (last_cp is not None and k - last_cp <= gap):
            continue
        events.append(k)
        last_cp = k
    return sorted(events)
