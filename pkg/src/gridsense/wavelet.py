"""Orthogonal wavelet filter banks with periodic boundaries.

A level splits its input ``x`` of even length ``N`` into

    a[n] = sum_k L[k] * x[(2n + k) mod N]
    d[n] = sum_k H[k] * x[(2n + k) mod N]

and synthesis is the transpose of that map, which for an orthonormal pair
is the exact inverse. Periodisation keeps coefficient counts at exactly
``N / 2`` per level and works for any even ``N``, including lengths shorter
than the filter (the periodised filter is still orthonormal).

Wavelet-packet nodes are addressed ``(level, index)`` in natural (Paley)
order: node ``(j, 2m)`` is the lowpass child of ``(j-1, m)`` and
``(j, 2m+1)`` its highpass child. Because the highpass branch mirrors the
spectrum, natural index ``m`` covers frequency-ordered band ``gray_to_band(m)``;
see :func:`leaf_band_edges`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import DepthError, LengthError, StructureError
from .signal import Frame, SampleStream

# Daubechies order-9 scaling filter (18 taps, 9 vanishing moments), minimum
# phase. Generated by spectral factorisation of the Daubechies half-band
# polynomial at 50-digit precision; identical to the tabulated "db9"
# reconstruction lowpass of Daubechies, Ten Lectures on Wavelets (1992).
DB9_LOWPASS = (
    0.038077947363878346589,
    0.24383467461259035373,
    0.6048231236901111119,
    0.65728807805130053808,
    0.13319738582500757619,
    -0.29327378327917490881,
    -0.096840783222976460514,
    0.14854074933810638014,
    0.030725681479333379212,
    -0.067632829061329973676,
    0.00025094711483145195759,
    0.022361662123679097205,
    -0.0047232047577513972779,
    -0.0042815036824634298345,
    0.0018476468830562264766,
    0.00023038576352319596721,
    -0.00025196318894271013697,
    0.000039347320316271599481,
)

HAAR_LOWPASS = (2 ** -0.5, 2 ** -0.5)

PERIODIC = "periodic"


@dataclass(frozen=True)
class WaveletFilterPair:
    lowpass: np.ndarray
    highpass: np.ndarray
    name: str

    def __post_init__(self):
        lo = np.asarray(self.lowpass, dtype=float)
        hi = np.asarray(self.highpass, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape or lo.shape[0] < 2:
            raise StructureError(f"{self.name}: lowpass and highpass must be equal-length 1-D taps")
        k = np.arange(lo.shape[0])
        if np.max(np.abs(hi - (-1.0) ** k * lo[::-1])) > 1e-12:
            raise StructureError(f"{self.name}: highpass is not the quadrature mirror of the lowpass")
        if abs(lo.sum() - np.sqrt(2.0)) > 1e-8:
            raise StructureError(f"{self.name}: lowpass taps must sum to sqrt(2)")

    @classmethod
    def from_lowpass(cls, lowpass, name: str) -> "WaveletFilterPair":
        lo = np.asarray(lowpass, dtype=float)
        n = lo.shape[0]
        hi = np.array([(-1) ** k * lo[n - 1 - k] for k in range(n)])
        lo.setflags(write=False)
        hi.setflags(write=False)
        return cls(lo, hi, name)

    def __len__(self) -> int:
        return self.lowpass.shape[0]


def db9() -> WaveletFilterPair:
    return WaveletFilterPair.from_lowpass(DB9_LOWPASS, "db9")


def haar() -> WaveletFilterPair:
    return WaveletFilterPair.from_lowpass(HAAR_LOWPASS, "haar")


@dataclass
class WaveletTree:
    nodes: Dict[Tuple[int, int], np.ndarray]
    max_level: int
    filters: WaveletFilterPair
    kind: str  # "dwt" or "wpt"
    signal_length: int
    sample_rate_hz: float
    start_index: int = 0
    boundary_mode: str = PERIODIC

    def level(self, j: int) -> Dict[int, np.ndarray]:
        return {m: c for (lvl, m), c in sorted(self.nodes.items()) if lvl == j}

    def leaves(self):
        return [self.nodes[(self.max_level, m)] for m in range(2 ** self.max_level)]


def _analysis_index(n: int, taps: int) -> np.ndarray:
    return (2 * np.arange(n // 2)[:, None] + np.arange(taps)[None, :]) % n


def split(x: np.ndarray, filters: WaveletFilterPair):
    """One analysis level: (approximation, detail). ``len(x)`` must be even."""
    n = x.shape[0]
    if n % 2 or n == 0:
        raise LengthError(f"periodic split needs an even, nonzero length; got {n}")
    gathered = x[_analysis_index(n, len(filters))]
    return gathered @ filters.lowpass, gathered @ filters.highpass


def merge(approx: np.ndarray, detail: np.ndarray, filters: WaveletFilterPair) -> np.ndarray:
    """Inverse of :func:`split`."""
    if approx.shape != detail.shape:
        raise StructureError("approximation and detail lengths differ")
    n = 2 * approx.shape[0]
    idx = _analysis_index(n, len(filters))
    contrib = approx[:, None] * filters.lowpass + detail[:, None] * filters.highpass
    return np.bincount(idx.ravel(), weights=contrib.ravel(), minlength=n)


def max_feasible_level(n: int) -> int:
    level = 0
    while n % 2 == 0 and n >= 2:
        n //= 2
        level += 1
    return level


def _check_depth(n: int, levels: int):
    if levels < 1:
        raise DepthError(f"levels must be >= 1, got {levels}", max_feasible_level(n))
    feasible = max_feasible_level(n)
    if levels > feasible:
        raise DepthError(
            f"a frame of {n} samples supports at most {feasible} periodic levels, "
            f"{levels} requested", feasible)


def dwt_decompose(frame: Frame, filters: WaveletFilterPair, levels: int) -> WaveletTree:
    x = np.asarray(frame.values, dtype=float)
    _check_depth(x.shape[0], levels)
    nodes = {}
    approx = x
    for j in range(1, levels + 1):
        approx, detail = split(approx, filters)
        nodes[(j, 0)] = approx
        nodes[(j, 1)] = detail
    return WaveletTree(nodes, levels, filters, "dwt", x.shape[0], frame.sample_rate_hz,
                       frame.start_index)


def dwt_reconstruct(tree: WaveletTree) -> Frame:
    if tree.kind != "dwt" or tree.boundary_mode != PERIODIC:
        raise StructureError(f"not a periodic DWT tree (kind={tree.kind!r})")
    k = tree.max_level
    expected = tree.signal_length
    for j in range(1, k + 1):
        expected //= 2
        for m in (0, 1):
            node = tree.nodes.get((j, m))
            if node is None or node.shape[0] != expected:
                raise StructureError(f"node ({j}, {m}) missing or wrong length")
    approx = tree.nodes[(k, 0)]
    for j in range(k, 0, -1):
        approx = merge(approx, tree.nodes[(j, 1)], tree.filters)
    return Frame(approx, tree.sample_rate_hz, tree.start_index)


def wpt_decompose(frame: Frame, filters: WaveletFilterPair, levels: int) -> WaveletTree:
    x = np.asarray(frame.values, dtype=float)
    _check_depth(x.shape[0], levels)
    nodes = {(0, 0): x}
    for j in range(1, levels + 1):
        for m in range(2 ** (j - 1)):
            lo, hi = split(nodes[(j - 1, m)], filters)
            nodes[(j, 2 * m)] = lo
            nodes[(j, 2 * m + 1)] = hi
    return WaveletTree(nodes, levels, filters, "wpt", x.shape[0], frame.sample_rate_hz,
                       frame.start_index)


def wpt_reconstruct(tree: WaveletTree) -> Frame:
    if tree.kind != "wpt":
        raise StructureError("not a wavelet-packet tree")
    level = {m: tree.nodes[(tree.max_level, m)] for m in range(2 ** tree.max_level)}
    for j in range(tree.max_level, 0, -1):
        level = {m: merge(level[2 * m], level[2 * m + 1], tree.filters) for m in range(2 ** (j - 1))}
    return Frame(level[0], tree.sample_rate_hz, tree.start_index)


def gray_to_band(m: int) -> int:
    """Frequency-ordered band position of natural-order packet node ``m``."""
    band = 0
    while m:
        band ^= m
        m >>= 1
    return band


def leaf_band_edges(level: int, m: int, sample_rate_hz: float) -> Tuple[float, float]:
    """Nominal (low, high) frequency edges in Hz of natural-order node ``(level, m)``."""
    b = gray_to_band(m)
    width = sample_rate_hz / 2.0 / 2 ** level
    return b * width, (b + 1) * width


@dataclass
class EntropyFeature:
    entropies: Dict[Tuple[int, int], float]
    normalized: Dict[int, np.ndarray]
    degenerate: Dict[Tuple[int, int], bool] = field(default_factory=dict)

    def stacked(self, levels=None) -> np.ndarray:
        levels = sorted(self.normalized) if levels is None else levels
        return np.concatenate([self.normalized[j] for j in levels])


def coefficient_entropy(w) -> float:
    """Shannon entropy (nats) of the energy distribution ``|w|^2 / sum |w|^2``.

    An all-zero node has entropy 0 (limit of p log p).
    """
    e = np.abs(np.asarray(w, dtype=float)) ** 2
    total = e.sum()
    if total == 0.0:
        return 0.0
    p = e[e > 0] / total
    return float(-np.sum(p * np.log(p)))


def wp_entropy(tree: WaveletTree) -> EntropyFeature:
    if tree.max_level < 1:
        raise StructureError("entropy needs at least one decomposition level")
    entropies, degenerate, normalized = {}, {}, {}
    for j in range(1, tree.max_level + 1):
        level = tree.level(j)
        values = []
        for m, coeffs in level.items():
            entropies[(j, m)] = coefficient_entropy(coeffs)
            degenerate[(j, m)] = not np.any(coeffs)
            values.append(entropies[(j, m)])
        values = np.array(values)
        total = values.sum()
        normalized[j] = values / total if total > 0 else np.zeros_like(values)
    return EntropyFeature(entropies, normalized, degenerate)


@dataclass
class WptEntropyMap:
    values: np.ndarray      # (sum of 2^j for j=1..levels) x (4 * cycles)
    degenerate: np.ndarray  # same shape, True where the node was all-zero


def wpt_entropy_feature_map(stream: SampleStream, f0_hz: float = 50.0, cycles: int = 3,
                            frames_per_cycle: int = 4, levels: int = 3,
                            filters: Optional[WaveletFilterPair] = None) -> WptEntropyMap:
    """Quarter-cycle wavelet-packet entropy map over ``cycles`` power cycles.

    Each frame is zero-padded at its end to a multiple of ``2**levels`` so the
    periodic transform can reach ``levels`` (a 20 kHz quarter cycle is 100
    samples). With the defaults the result is 14 x 12.
    """
    filters = filters or db9()
    per_cycle = stream.sample_rate_hz / f0_hz
    frame_len = per_cycle / frames_per_cycle
    if abs(frame_len - round(frame_len)) > 1e-9:
        raise LengthError(f"{per_cycle:g} samples per cycle do not split into "
                          f"{frames_per_cycle} whole frames")
    frame_len = int(round(frame_len))
    n_frames = cycles * frames_per_cycle
    if len(stream) < n_frames * frame_len:
        raise LengthError(f"need {n_frames * frame_len} samples, got {len(stream)}")
    block = 2 ** levels
    padded = -(-frame_len // block) * block
    rows = sum(2 ** j for j in range(1, levels + 1))
    values = np.zeros((rows, n_frames))
    flags = np.zeros((rows, n_frames), dtype=bool)
    for c in range(n_frames):
        seg = np.zeros(padded)
        seg[:frame_len] = stream.samples[c * frame_len:(c + 1) * frame_len]
        tree = wpt_decompose(Frame(seg, stream.sample_rate_hz, c * frame_len), filters, levels)
        feat = wp_entropy(tree)
        values[:, c] = feat.stacked()
        flags[:, c] = [feat.degenerate[(j, m)] for j in range(1, levels + 1) for m in range(2 ** j)]
    return WptEntropyMap(values, flags)


def highband_extract(stream: SampleStream, filters: Optional[WaveletFilterPair] = None) -> SampleStream:
    """Top half-band of ``stream``: the one-level detail branch at half the rate.

    Odd-length input is zero-padded by one sample, so the output has
    ``ceil(len/2)`` samples.
    """
    filters = filters or db9()
    x = stream.samples
    if len(x) < 2:
        raise LengthError("highband_extract needs at least 2 samples")
    if len(x) % 2:
        x = np.append(x, 0.0)
    _, detail = split(x, filters)
    return SampleStream(detail, stream.sample_rate_hz / 2.0, stream.channel_label)
