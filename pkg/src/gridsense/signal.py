"""Sample streams, framing, windowing, radix-2 FFT and basic frame statistics.

Everything here is a pure function of its inputs. Arrays handed out inside
``SampleStream``/``Frame``/``Spectrum`` are marked read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import InvalidSizeError, ParameterError

CHANNELS = ("current", "voltage")


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SampleStream:
    samples: np.ndarray
    sample_rate_hz: float
    channel_label: str = "current"

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise ParameterError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if self.channel_label not in CHANNELS:
            raise ParameterError(f"channel_label must be one of {CHANNELS}")
        arr = _frozen(self.samples)
        if arr.ndim != 1:
            raise ParameterError("samples must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples) -> "SampleStream":
        return SampleStream(samples, self.sample_rate_hz, self.channel_label)


@dataclass(frozen=True)
class Frame:
    values: np.ndarray
    sample_rate_hz: float
    start_index: int = 0

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.ndim != 1:
            raise InvalidSizeError("frame values must be one-dimensional")
        object.__setattr__(self, "values", arr)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.length


@dataclass(frozen=True)
class Spectrum:
    bins: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "bins", _frozen(self.bins, complex))

    @property
    def resolution_hz(self) -> float:
        return self.sample_rate_hz / len(self.bins)

    def __len__(self) -> int:
        return self.bins.shape[0]

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(len(self.bins)) * self.resolution_hz


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann coefficients ``0.5 - 0.5*cos(2*pi*j/n)`` for j in 0..n-1."""
    if n < 2:
        raise InvalidSizeError(f"window length must be >= 2, got {n}")
    j = np.arange(n)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * j / n)
    w.setflags(write=False)
    return w


def frame_stream(stream: SampleStream, frame_len: int, overlap_fraction: float = 0.5) -> List[Frame]:
    """Cut ``stream`` into frames of ``frame_len`` samples, starting at sample 0.

    The hop is ``frame_len * (1 - overlap_fraction)`` rounded down; a trailing
    partial frame is dropped. A stream shorter than one frame gives ``[]``.
    """
    if frame_len < 2:
        raise InvalidSizeError(f"frame_len must be >= 2, got {frame_len}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ParameterError(f"overlap_fraction must lie in [0, 1), got {overlap_fraction}")
    hop = max(1, int(round(frame_len * (1.0 - overlap_fraction), 9)))
    x = stream.samples
    starts = range(0, len(x) - frame_len + 1, hop)
    return [Frame(x[s:s + frame_len], stream.sample_rate_hz, s) for s in starts]


_BITREV_CACHE: dict = {}
_TWIDDLE_CACHE: dict = {}


def _bit_reverse_permutation(n: int) -> np.ndarray:
    perm = _BITREV_CACHE.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        perm = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            perm |= ((idx >> b) & 1) << (bits - 1 - b)
        _BITREV_CACHE[n] = perm
    return perm


def _twiddles(size: int) -> np.ndarray:
    w = _TWIDDLE_CACHE.get(size)
    if w is None:
        w = np.exp(-2j * np.pi * np.arange(size // 2) / size)
        _TWIDDLE_CACHE[size] = w
    return w


def fft_array(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    Works on any leading batch shape; the last axis must be a power of two.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise InvalidSizeError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    out = x.astype(complex)[..., _bit_reverse_permutation(n)]
    size = 2
    while size <= n:
        half = size // 2
        blocks = out.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(size)
        out = np.concatenate((even + odd, even - odd), axis=-1).reshape(lead + (n,))
        size *= 2
    return out


def ifft_array(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    return np.conj(fft_array(np.conj(X))) / X.shape[-1]


def fft(frame: Frame, window: Optional[np.ndarray] = None) -> Spectrum:
    values = frame.values
    if window is not None:
        window = np.asarray(window, dtype=float)
        if window.shape != values.shape:
            raise InvalidSizeError(f"window length {window.shape[0]} != frame length {values.shape[0]}")
        values = values * window
    return Spectrum(fft_array(values), frame.sample_rate_hz)


def ifft(spectrum: Spectrum) -> np.ndarray:
    return ifft_array(spectrum.bins)


def rms(frame) -> float:
    values = frame.values if isinstance(frame, Frame) else np.asarray(frame, dtype=float)
    if values.size == 0:
        raise InvalidSizeError("rms of an empty frame")
    return float(np.sqrt(np.mean(values * values)))


def remove_dc(frame: Frame) -> Frame:
    if frame.length == 0:
        raise InvalidSizeError("remove_dc of an empty frame")
    v = frame.values - frame.values.mean()
    # second pass mops up rounding left by the first subtraction
    v = v - v.mean()
    return Frame(v, frame.sample_rate_hz, frame.start_index)
