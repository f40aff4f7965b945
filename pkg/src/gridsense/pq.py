"""Threshold power-quality monitoring: per-frame parameters and RMS event tracking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .errors import AlignmentError, OrderingError, ParameterError
from .signal import Frame, fft_array, hann_window, is_power_of_two, rms

HARMONIC_ORDERS = 13


@dataclass(frozen=True)
class PqThresholds:
    swell_lo: float = 1.10
    swell_hi: float = 1.80
    dip_lo: float = 0.10
    dip_hi: float = 0.90
    interruption: float = 0.10
    rapid_change_rate: float = 0.05  # fraction of nominal per second

    def __post_init__(self):
        if not (self.interruption <= self.dip_lo and self.dip_hi < 1.0 < self.swell_lo
                and self.swell_lo < self.swell_hi):
            raise ParameterError(f"inconsistent thresholds: {self}")


@dataclass
class ElectricalParams:
    rms_voltage: float
    rms_current: float
    frequency_hz: float
    power_factor: float
    active_power_w: float
    harmonic_magnitudes: np.ndarray  # RMS volts, orders 1..13


def _harmonic_basis(n: int, fs: float, f0: float, orders) -> np.ndarray:
    t = np.arange(n) / fs
    cols = [np.ones(n)]
    for k in orders:
        w = 2 * np.pi * k * f0 * t
        cols += [np.cos(w), np.sin(w)]
    return np.column_stack(cols)


def fit_harmonics(x, fs: float, f0: float, orders=(1,)) -> np.ndarray:
    """Least-squares complex amplitudes (peak, cosine reference) at ``k*f0``.

    ``x ~ dc + sum_k Re(A_k * exp(j*2*pi*k*f0*t))``. Unlike a single DFT bin
    this stays unbiased when the frame does not hold whole cycles.
    """
    x = np.asarray(x, dtype=float)
    basis = _harmonic_basis(x.shape[0], fs, f0, orders)
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    return coef[1::2] - 1j * coef[2::2]


def _fit_energy(x, fs, f):
    basis = _harmonic_basis(x.shape[0], fs, f, (1,))
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    fitted = basis @ coef
    return float(fitted @ fitted)


def estimate_frequency(x, fs: float, nominal_hz: float, span: float = 0.1, grid: int = 21,
                       rounds: int = 4) -> float:
    """Fundamental frequency near ``nominal_hz``.

    Scans the energy captured by a single-tone least-squares fit over
    ``nominal*(1 +/- span)``, then parabolically interpolates around the best
    grid point and narrows the grid. Each round shrinks the step tenfold.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = nominal_hz * (1 - span), nominal_hz * (1 + span)
    best = nominal_hz
    for _ in range(rounds):
        freqs = np.linspace(lo, hi, grid)
        energy = np.array([_fit_energy(x, fs, f) for f in freqs])
        i = int(np.argmax(energy))
        step = freqs[1] - freqs[0]
        best = freqs[i]
        if 0 < i < grid - 1:
            y0, y1, y2 = energy[i - 1], energy[i], energy[i + 1]
            denom = y0 - 2 * y1 + y2
            if denom < 0:
                best = freqs[i] + 0.5 * step * (y0 - y2) / denom
        lo, hi = best - 2 * step, best + 2 * step
    return float(best)


def spectrum_harmonics(x, fs: float, f0: float, orders: int = HARMONIC_ORDERS) -> np.ndarray:
    """RMS magnitude at the FFT bins nearest ``k*f0`` (Hann window, amplitude-corrected)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if not is_power_of_two(n):
        raise ParameterError("spectrum harmonics need a power-of-two frame")
    w = hann_window(n)
    spec = fft_array((x - x.mean()) * w)
    scale = 2.0 / w.sum() / np.sqrt(2.0)
    out = []
    for k in range(1, orders + 1):
        b = int(round(k * f0 * n / fs))
        out.append(np.abs(spec[b]) * scale if 0 < b <= n // 2 else 0.0)
    return np.array(out)


def compute_params(v_frame: Frame, i_frame: Frame, nominal_hz: float = 50.0) -> ElectricalParams:
    if v_frame.length != i_frame.length or v_frame.sample_rate_hz != i_frame.sample_rate_hz \
            or v_frame.start_index != i_frame.start_index:
        raise AlignmentError("voltage and current frames are not aligned")
    fs = v_frame.sample_rate_hz
    v, i = v_frame.values, i_frame.values
    v_rms, i_rms = rms(v_frame), rms(i_frame)
    f0 = estimate_frequency(v, fs, nominal_hz)
    top = min(HARMONIC_ORDERS, int((fs / 2) // f0))
    orders = range(1, top + 1)
    vk = fit_harmonics(v, fs, f0, orders)
    ik = fit_harmonics(i, fs, f0, orders)
    p = float(np.sum(np.abs(vk) * np.abs(ik) * np.cos(np.angle(vk) - np.angle(ik))) / 2.0)
    pf = p / (v_rms * i_rms) if v_rms > 0 and i_rms > 0 else 0.0
    if is_power_of_two(v_frame.length):
        harmonics = spectrum_harmonics(v, fs, f0)
    else:
        harmonics = np.abs(fit_harmonics(v, fs, f0, range(1, HARMONIC_ORDERS + 1))) / np.sqrt(2)
    return ElectricalParams(v_rms, i_rms, f0, float(np.clip(pf, -1.0, 1.0)), p, harmonics)


def classify_rms(fraction: float, thresholds: PqThresholds = PqThresholds()) -> str:
    """One of ``interruption``, ``dip``, ``normal``, ``swell``, ``out_of_band``.

    Bounds are inclusive on the event side: 1.10 is a swell, 0.90 a dip,
    while anything under the interruption threshold is an interruption.
    """
    if fraction < 0:
        raise ParameterError("RMS fraction must be >= 0")
    t = thresholds
    if fraction < t.interruption:
        return "interruption"
    if t.dip_lo <= fraction <= t.dip_hi:
        return "dip"
    if t.swell_lo <= fraction <= t.swell_hi:
        return "swell"
    if fraction > t.swell_hi:
        return "out_of_band"
    if fraction < t.dip_lo:  # only reachable if interruption < dip_lo
        return "dip"
    return "normal"


@dataclass
class PqEvent:
    kind: str
    start_index: int
    end_index: int
    extremum: float
    timestamp_s: float
    event_id: int = 0
    parent: Optional[int] = None
    out_of_band: bool = False
    truncated: bool = False

    def as_record(self) -> dict:
        return {
            "kind": self.kind, "event_id": self.event_id, "parent": self.parent,
            "start_index": self.start_index, "end_index": self.end_index,
            "timestamp_s": round(self.timestamp_s, 9), "extremum": self.extremum,
            "out_of_band": self.out_of_band, "truncated": self.truncated,
        }


@dataclass
class _Open:
    event: PqEvent
    worst: float


class PqTracker:
    """Single-pass RMS event tracker for one stream.

    A swell lasts while RMS >= swell_lo, a dip while RMS <= dip_hi, an
    interruption while RMS < interruption (reported inside its enclosing dip
    via ``parent``). ``end_index`` is the index of the first sample at which the
    event had ended. A rapid change is a run of consecutive steps between
    normal-band samples whose change exceeds ``rapid_change_rate * dt``.
    """

    def __init__(self, thresholds: PqThresholds = PqThresholds(), sample_rate_hz: float = 1.0):
        self.t = thresholds
        self.fs = float(sample_rate_hz)
        self._next_id = 1
        self._swell: Optional[_Open] = None
        self._dip: Optional[_Open] = None
        self._intr: Optional[_Open] = None
        self._rapid: Optional[_Open] = None
        self._last: Optional[Tuple[int, float]] = None

    def _open(self, kind, index, value, parent=None) -> _Open:
        ev = PqEvent(kind, index, index, value, index / self.fs, self._next_id, parent)
        self._next_id += 1
        return _Open(ev, value)

    @staticmethod
    def _close(o: _Open, index: int, truncated=False) -> PqEvent:
        o.event.end_index = index
        o.event.extremum = o.worst
        o.event.truncated = truncated
        return o.event

    def _normal(self, v: float) -> bool:
        return self.t.dip_hi < v < self.t.swell_lo

    def update(self, index: int, value: float) -> List[PqEvent]:
        t = self.t
        if self._last is not None and index <= self._last[0]:
            raise OrderingError(f"index {index} does not increase past {self._last[0]}")
        closed: List[PqEvent] = []

        if self._intr is not None and value >= t.interruption:
            closed.append(self._close(self._intr, index))
            self._intr = None
        if self._dip is not None and value > t.dip_hi:
            closed.append(self._close(self._dip, index))
            self._dip = None
        if self._swell is not None and value < t.swell_lo:
            closed.append(self._close(self._swell, index))
            self._swell = None

        rapid_step = False
        if self._last is not None:
            prev_i, prev_v = self._last
            dt = (index - prev_i) / self.fs
            rapid_step = (self._normal(prev_v) and self._normal(value)
                          and abs(value - prev_v) > t.rapid_change_rate * dt)
            if rapid_step:
                if self._rapid is None:
                    self._rapid = self._open("rapid_change", prev_i, prev_v)
                if abs(value - 1.0) > abs(self._rapid.worst - 1.0):
                    self._rapid.worst = value
                self._rapid.event.end_index = index
            elif self._rapid is not None:
                closed.append(self._close(self._rapid, self._rapid.event.end_index))
                self._rapid = None

        if value >= t.swell_lo:
            if self._swell is None:
                self._swell = self._open("swell", index, value)
            self._swell.worst = max(self._swell.worst, value)
            if value > t.swell_hi:
                self._swell.event.out_of_band = True
        if value <= t.dip_hi:
            if self._dip is None:
                self._dip = self._open("dip", index, value)
            self._dip.worst = min(self._dip.worst, value)
        if value < t.interruption:
            if self._intr is None:
                self._intr = self._open("interruption", index, value, parent=self._dip.event.event_id)
            self._intr.worst = min(self._intr.worst, value)

        self._last = (index, value)
        return closed

    def finish(self) -> List[PqEvent]:
        """Close whatever is still open at end of stream (flagged ``truncated``)."""
        if self._last is None:
            return []
        end = self._last[0] + 1
        closed = []
        if self._rapid is not None:
            closed.append(self._close(self._rapid, self._rapid.event.end_index))
        for o in (self._intr, self._dip, self._swell):
            if o is not None:
                closed.append(self._close(o, end, truncated=True))
        self._rapid = self._intr = self._dip = self._swell = None
        return closed


def track_events(rms_series: Iterable[Tuple[int, float]], thresholds: PqThresholds = PqThresholds(),
                 sample_rate_hz: float = 1.0) -> List[PqEvent]:
    """Run a fresh :class:`PqTracker` over ``(index, fraction)`` pairs.

    Events come back ordered by start index, parents before their children.
    """
    tracker = PqTracker(thresholds, sample_rate_hz)
    events = []
    for index, value in rms_series:
        events.extend(tracker.update(int(index), float(value)))
    events.extend(tracker.finish())
    return sorted(events, key=lambda e: (e.start_index, e.parent is not None, e.event_id))


def rms_series(samples, sample_rate_hz: float, nominal_rms: float, f0_hz: float = 50.0,
               window_cycles: float = 1.0, step_cycles: float = 0.5):
    """Sliding RMS as (end index, fraction of nominal) pairs.

    Defaults: one-cycle window refreshed every half cycle.
    """
    x = np.asarray(samples, dtype=float)
    win = int(round(window_cycles * sample_rate_hz / f0_hz))
    step = int(round(step_cycles * sample_rate_hz / f0_hz))
    csum = np.concatenate(([0.0], np.cumsum(x * x)))
    out = []
    for end in range(win, len(x) + 1, step):
        ms = (csum[end] - csum[end - win]) / win
        out.append((end - 1, float(np.sqrt(max(ms, 0.0)) / nominal_rms)))
    return out
