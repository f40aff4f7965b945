"""Threaded stage pipeline with bounded queues, backpressure and latency accounting."""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ParameterError, StageError, StatisticsError
from .hif_features import FRAMES_PER_MAP, HOP, MAP_SPAN, FeatureMap, default_band_plan, \
    window_feature_map
from .signal import SampleStream

DEFAULT_CAPACITY = 8
CHUNK = HOP                                  # 256 samples, 12.8 ms at 20 kHz
MAP_HOP = FRAMES_PER_MAP * HOP               # one map every 76.8 ms
LATENCY_BUDGET_MS = 115.2                    # 89.6 ms data span + one 25.6 ms frame of slack

_END = object()


@dataclass(frozen=True)
class LoopBudget:
    entries: Tuple[Tuple[float, float], ...]   # (duration_ms, period_ms)


def processor_budget(budget) -> float:
    """Sum of duration/period over all loops, in percent."""
    entries = budget.entries if isinstance(budget, LoopBudget) else tuple(budget)
    if not entries:
        raise DomainError("processor budget needs at least one loop")
    total = 0.0
    for duration, period in entries:
        if period <= 0 or duration < 0:
            raise DomainError(f"invalid loop ({duration} ms every {period} ms)")
        total += duration / period
    return 100.0 * total


# Loop timings measured on the reference embedded target.
REFERENCE_LOOPS = LoopBudget(((3.5, 12.8), (1.0, 76.8), (20.9, 76.8)))


@dataclass
class Packet:
    """Unit of work flowing between stages; ``span`` is in source samples."""

    seq: int
    span: Tuple[int, int]
    payload: object


@dataclass
class StageSpec:
    name: str
    fn: Callable[[Packet], object]       # returns None, a Packet, or a list of Packets
    capacity: int = DEFAULT_CAPACITY
    duration_ms: Optional[float] = None
    period_ms: Optional[float] = None
    tag: str = ""

    def __post_init__(self):
        if self.capacity < 1:
            raise ParameterError("queue capacity must be >= 1")


@dataclass
class PipelineStats:
    incoming_throughput: float = 0.0        # samples/s
    outgoing_throughput: float = 0.0        # results/s
    latencies_ms: List[float] = field(default_factory=list)
    jitter_ms: float = 0.0
    overflow_count: int = 0
    max_queue_occupancy: List[int] = field(default_factory=list)
    link_counts: List[Tuple[int, int]] = field(default_factory=list)   # (put, taken) per queue
    samples_in: int = 0
    results: int = 0
    wall_s: float = 0.0

    def as_record(self) -> dict:
        rep = latency_report(self) if self.latencies_ms else {}
        return {
            "incoming_throughput_samples_per_s": round(self.incoming_throughput, 3),
            "outgoing_throughput_results_per_s": round(self.outgoing_throughput, 4),
            "results": self.results, "samples_in": self.samples_in,
            "queue_overflows": self.overflow_count, "max_queue_occupancy": self.max_queue_occupancy,
            "wall_s": round(self.wall_s, 3), **rep,
        }


def latency_report(stats: PipelineStats, budget_ms: float = LATENCY_BUDGET_MS) -> dict:
    lat = np.asarray(stats.latencies_ms, dtype=float)
    if lat.size == 0:
        raise StatisticsError("latency report needs at least one result")
    return {"latency_p50_ms": float(np.percentile(lat, 50)), "latency_p99_ms": float(np.percentile(lat, 99)),
            "latency_max_ms": float(lat.max()), "jitter_ms": float(lat.std()),
            "latency_budget_ms": budget_ms, "within_budget": bool(lat.max() <= budget_ms)}


class _Link:
    """Bounded FIFO that counts puts, takes, full-at-put events and peak occupancy."""

    def __init__(self, capacity: int):
        self.q: "queue.Queue" = queue.Queue(maxsize=capacity)
        self.puts = self.takes = self.full_events = self.peak = 0
        self._lock = threading.Lock()

    def put(self, item, stop: threading.Event) -> bool:
        if self.q.full():
            with self._lock:
                self.full_events += 1
        while not stop.is_set():
            try:
                self.q.put(item, timeout=0.05)
            except queue.Full:
                continue
            with self._lock:
                if item is not _END:
                    self.puts += 1
                self.peak = max(self.peak, self.q.qsize())
            return True
        return False

    def get(self, stop: threading.Event):
        while not stop.is_set():
            try:
                item = self.q.get(timeout=0.05)
            except queue.Empty:
                continue
            if item is not _END:
                with self._lock:
                    self.takes += 1
            return item
        return _END


def stream_chunks(stream: SampleStream, chunk: int = CHUNK, duration_s: Optional[float] = None) -> Iterator[Packet]:
    x = stream.samples
    limit = len(x) if duration_s is None else min(len(x), int(round(duration_s * stream.sample_rate_hz)))
    for seq, start in enumerate(range(0, limit - chunk + 1, chunk)):
        yield Packet(seq, (start, start + chunk), x[start:start + chunk])


def run_pipeline(stages: Sequence[StageSpec], source: Iterable[Packet], sample_rate_hz: float,
                 realtime: bool = True, source_capacity: int = DEFAULT_CAPACITY):
    """Run ``stages`` as a chain of threads fed by ``source``.

    With ``realtime`` the source releases each chunk when its last sample
    would have been acquired, and a sample's acquisition time is
    ``t0 + index / fs``; otherwise a sample is acquired when its chunk is
    released. Latency runs from acquisition of a result's first span sample to
    its emission. Returns ``(stats, results)``.
    """
    stop = threading.Event()
    links = [_Link(source_capacity)] + [_Link(s.capacity) for s in stages]
    acquired = {}          # chunk start -> release time (unpaced mode)
    chunk_len = [CHUNK]
    failure: List[StageError] = []
    counts = {"samples": 0}
    t0 = time.monotonic()

    def acquisition_time(index: int) -> float:
        if realtime:
            return t0 + index / sample_rate_hz
        c = chunk_len[0]
        return acquired.get(index - index % c, t0)

    def produce():
        try:
            for pkt in source:
                a, b = pkt.span
                chunk_len[0] = b - a
                if realtime:
                    delay = t0 + b / sample_rate_hz - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                acquired[a] = time.monotonic()
                counts["samples"] += b - a
                if not links[0].put(pkt, stop):
                    return
        except Exception as exc:  # noqa: BLE001 - surfaced via StageError
            failure.append(StageError("source", exc))
            stop.set()
        finally:
            links[0].put(_END, stop)

    def work(k: int, spec: StageSpec):
        inbox, outbox = links[k], links[k + 1]
        while True:
            item = inbox.get(stop)
            if item is _END:
                outbox.put(_END, stop)
                return
            try:
                out = spec.fn(item)
            except Exception as exc:  # noqa: BLE001 - surfaced via StageError
                failure.append(StageError(spec.name, exc))
                stop.set()
                return
            for o in ([] if out is None else out if isinstance(out, list) else [out]):
                if not outbox.put(o, stop):
                    return

    threads = [threading.Thread(target=produce, name="source", daemon=True)]
    threads += [threading.Thread(target=work, args=(k, s), name=s.name, daemon=True) for k, s in enumerate(stages)]
    for th in threads:
        th.start()
    results, emit_times, latencies = [], [], []
    sink = links[-1]
    while True:
        item = sink.get(stop)
        if item is _END:
            break
        now = time.monotonic()
        results.append(item)
        emit_times.append(now)
        latencies.append(1000.0 * (now - acquisition_time(item.span[0])))
    for th in threads:
        th.join(timeout=5.0)
    if failure:
        raise failure[0]
    wall = time.monotonic() - t0
    stats = PipelineStats()
    stats.samples_in = counts["samples"]
    stats.wall_s = wall
    stats.incoming_throughput = counts["samples"] / wall if wall > 0 else 0.0
    stats.results = len(results)
    if len(emit_times) >= 2:
        stats.outgoing_throughput = (len(emit_times) - 1) / (emit_times[-1] - emit_times[0])
    stats.latencies_ms = latencies
    stats.jitter_ms = float(np.std(latencies)) if latencies else 0.0
    stats.overflow_count = sum(link.full_events for link in links)
    stats.max_queue_occupancy = [link.peak for link in links]
    stats.link_counts = [(link.puts, link.takes) for link in links]
    return stats, results


# --- canonical HIF chain ----------------------------------------------------------

class MapAssembler:
    """Stateful stage: buffers chunks and emits a feature map every ``map_hop`` samples."""

    def __init__(self, sample_rate_hz: float = 20000.0, map_hop: int = MAP_HOP):
        self.fs = sample_rate_hz
        self.map_hop = map_hop
        self.plan = default_band_plan(sample_rate_hz)
        self._buf = np.zeros(0)
        self._buf_start = 0
        self._next = 0
        self._seq = 0

    def __call__(self, pkt: Packet):
        a, b = pkt.span
        if self._buf.size == 0:
            self._buf_start = a
        self._buf = np.concatenate((self._buf, np.asarray(pkt.payload, dtype=float)))
        out = []
        while self._next + MAP_SPAN <= self._buf_start + self._buf.size:
            lo = self._next - self._buf_start
            values = window_feature_map(self._buf[lo:lo + MAP_SPAN], self.fs, self.plan)
            out.append(Packet(self._seq, (self._next, self._next + MAP_SPAN),
                              FeatureMap(values, self._next, MAP_SPAN, self.fs)))
            self._seq += 1
            self._next += self.map_hop
        drop = self._next - self._buf_start
        if drop > 0:
            self._buf = self._buf[drop:]
            self._buf_start += drop
        return out


def hif_chain(model, sample_rate_hz: float = 20000.0, capacity: int = DEFAULT_CAPACITY) -> List[StageSpec]:
    """Feature stage then classifier stage; the source plays the acquisition role."""
    from .detectors import classify_hif

    def classify(pkt: Packet):
        return Packet(pkt.seq, pkt.span, classify_hif(pkt.payload, model))

    return [
        StageSpec("feature", MapAssembler(sample_rate_hz), capacity, 1.0, 76.8, "feature"),
        StageSpec("classify", classify, capacity, 20.9, 76.8, "classify"),
    ]
