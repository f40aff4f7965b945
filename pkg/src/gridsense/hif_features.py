"""Short-time FFT octave-band log-energy features for HIF classification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import PlanError, RateError, ShapeError
from .signal import Frame, SampleStream, Spectrum, fft_array, hann_window

FRAME_LEN = 512
FRAMES_PER_MAP = 6
HOP = FRAME_LEN // 2
MAP_SPAN = FRAME_LEN + (FRAMES_PER_MAP - 1) * HOP  # 1792 samples, 89.6 ms at 20 kHz
EPS_FLOOR = 1e-20

_CANONICAL = {
    20000.0: (0.0, 78.0, 156.0, 312.0, 625.0, 1250.0, 2500.0, 5000.0, 10000.0),
    10000.0: (39.06, 78.125, 156.25, 312.5, 625.0, 1250.0, 2500.0, 5000.0),
}


@dataclass(frozen=True)
class BandPlan:
    edges: Tuple[float, ...]
    sample_rate_hz: float

    def __post_init__(self):
        e = tuple(float(v) for v in self.edges)
        if len(e) < 2 or any(b <= a for a, b in zip(e, e[1:])):
            raise PlanError(f"band edges must be strictly increasing: {e}")
        object.__setattr__(self, "edges", e)

    @property
    def band_count(self) -> int:
        return len(self.edges) - 1

    def bands(self):
        return list(zip(self.edges[:-1], self.edges[1:]))


def default_band_plan(sample_rate_hz: float = 20000.0) -> BandPlan:
    """Canonical octave plans: 8 bands up to 10 kHz, or 7 bands up to 5 kHz.

    Edges are listed lowest first; the load-identification feature vector
    reverses the 10 kHz plan so its first element is the highest band.
    """
    try:
        edges = _CANONICAL[float(sample_rate_hz)]
    except KeyError:
        raise RateError(f"no canonical band plan for {sample_rate_hz} Hz; "
                        f"use octave_band_plan()") from None
    return BandPlan(edges, sample_rate_hz)


def octave_band_plan(sample_rate_hz: float, bands: int, first_band_from_zero: bool = True) -> BandPlan:
    """Octave bands ending at Nyquist, each upper edge twice the lower."""
    nyq = sample_rate_hz / 2.0
    uppers = [nyq / 2 ** k for k in range(bands)][::-1]
    lowest = 0.0 if first_band_from_zero else uppers[0] / 2.0
    return BandPlan((lowest, *uppers), sample_rate_hz)


def band_bin_masks(n_fft: int, plan: BandPlan) -> np.ndarray:
    """Boolean (bands x bins) assignment over bins 1..n_fft/2.

    A bin belongs to the band with ``lower <= f < upper``; the Nyquist bin
    goes to the top band. DC (bin 0) is never assigned.
    """
    freqs = np.arange(n_fft) * plan.sample_rate_hz / n_fft
    idx = np.arange(n_fft)
    usable = (idx >= 1) & (idx <= n_fft // 2)
    masks = np.zeros((plan.band_count, n_fft), dtype=bool)
    for b, (lo, hi) in enumerate(plan.bands()):
        top = b == plan.band_count - 1
        in_band = (freqs >= lo) & ((freqs < hi) | (top & np.isclose(freqs, hi)))
        masks[b] = in_band & usable
        if not masks[b].any():
            raise PlanError(f"band {b + 1} ({lo}-{hi} Hz) contains no FFT bins at N={n_fft}")
    return masks


def band_mean_power(power: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Mean of ``power`` (..., bins) over each band mask -> (..., bands)."""
    return (power @ masks.T.astype(float)) / masks.sum(axis=1)


def band_energies(spectrum: Spectrum, plan: BandPlan) -> np.ndarray:
    """log10 of the mean squared bin magnitude in each band (plus a 1e-20 floor)."""
    if abs(spectrum.sample_rate_hz - plan.sample_rate_hz) > 1e-9:
        raise PlanError("band plan and spectrum sample rates differ")
    masks = band_bin_masks(len(spectrum), plan)
    power = np.abs(spectrum.bins) ** 2
    return np.log10(band_mean_power(power, masks) + EPS_FLOOR)


@dataclass(frozen=True)
class FeatureMap:
    values: np.ndarray  # bands x frames
    start_sample: int
    span_samples: int
    sample_rate_hz: float

    @property
    def span(self) -> Tuple[int, int]:
        return self.start_sample, self.start_sample + self.span_samples

    @property
    def span_cycles(self) -> float:
        return self.span_samples / self.sample_rate_hz * 50.0


def frame_vectors(frames: np.ndarray, plan: BandPlan) -> np.ndarray:
    """Band log-energies for a batch of raw frames (..., N) -> (..., bands).

    Each frame is mean-removed and Hann-windowed before the FFT.
    """
    frames = np.asarray(frames, dtype=float)
    n = frames.shape[-1]
    centered = frames - frames.mean(axis=-1, keepdims=True)
    spec = fft_array(centered * hann_window(n))
    power = np.abs(spec) ** 2
    return np.log10(band_mean_power(power, band_bin_masks(n, plan)) + EPS_FLOOR)


def feature_map(frames: Sequence[Frame], plan: BandPlan = None) -> FeatureMap:
    if len(frames) != FRAMES_PER_MAP:
        raise ShapeError(f"feature map needs {FRAMES_PER_MAP} frames, got {len(frames)}")
    for f in frames:
        if f.length != FRAME_LEN:
            raise ShapeError(f"frames must be {FRAME_LEN} samples, got {f.length}")
    starts = [f.start_index for f in frames]
    if any(b - a != HOP for a, b in zip(starts, starts[1:])):
        raise ShapeError(f"frames must be consecutive with hop {HOP}; starts={starts}")
    rate = frames[0].sample_rate_hz
    plan = plan or default_band_plan(rate)
    values = frame_vectors(np.stack([f.values for f in frames]), plan).T
    return FeatureMap(values, starts[0], MAP_SPAN, rate)


def stream_feature_maps(stream: SampleStream, map_hop: int = FRAMES_PER_MAP * HOP,
                        plan: BandPlan = None) -> list:
    """All feature maps of a stream, one every ``map_hop`` samples.

    The default hop (1536 samples, 76.8 ms at 20 kHz) gives about 13 maps/s.
    """
    plan = plan or default_band_plan(stream.sample_rate_hz)
    x = stream.samples
    starts = list(range(0, len(x) - MAP_SPAN + 1, map_hop))
    if not starts:
        return []
    offsets = np.arange(FRAMES_PER_MAP) * HOP
    idx = np.array(starts)[:, None, None] + offsets[None, :, None] + np.arange(FRAME_LEN)
    vectors = frame_vectors(x[idx], plan)  # maps x frames x bands
    return [FeatureMap(v.T, s, MAP_SPAN, stream.sample_rate_hz) for v, s in zip(vectors, starts)]


def window_feature_map(samples: np.ndarray, sample_rate_hz: float = 20000.0, plan: BandPlan = None) -> np.ndarray:
    """8x6 map for a 1792-sample window, returned as a bare array."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-1] != MAP_SPAN:
        raise ShapeError(f"window must be {MAP_SPAN} samples")
    plan = plan or default_band_plan(sample_rate_hz)
    offsets = np.arange(FRAMES_PER_MAP) * HOP
    idx = offsets[:, None] + np.arange(FRAME_LEN)
    return np.swapaxes(frame_vectors(samples[..., idx], plan), -1, -2)
