"""On-disk formats: sample files, low-rate power series, run configuration, manifests.

Sample file: a JSON sidecar ``<name>.json``::

    {"format": "gridsense-samples", "version": 1, "sample_rate_hz": 20000.0,
     "channel_label": "current", "sample_count": 40000, "encoding": "f32le",
     "payload": "<name>.f32", "window_length": null, "extra": {}}

with the payload either little-endian float32 (``f32le``) or one value per
line (``text``). ``window_length`` marks files that concatenate equal-length
independent records.

Power series: two whitespace-separated columns ``seconds watts`` per line;
``#`` starts a comment.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import DataError, FormatError, ParameterError
from .signal import SampleStream

SAMPLES_FORMAT = "gridsense-samples"
SAMPLES_VERSION = 1
MANIFEST_FORMAT = "gridsense-manifest"
MANIFEST_VERSION = 1
ENV_PREFIX = "GRIDSENSE_"


class ConfigError(ParameterError):
    """Configuration problems (unknown keys, bad values) are usage errors."""


def dumps_json(obj) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


# --- sample files ------------------------------------------------------------------

def write_samples(path, stream: SampleStream, encoding: str = "f32le", window_length: Optional[int] = None,
                  extra: Optional[dict] = None) -> Path:
    """Write ``stream`` as ``path`` (sidecar, ``.json`` added if missing) plus payload."""
    side = Path(path)
    if side.suffix != ".json":
        side = side.with_suffix(".json")
    x = np.asarray(stream.samples, dtype=float)
    if encoding == "f32le":
        payload = side.with_suffix(".f32")
        payload.write_bytes(x.astype("<f4").tobytes())
    elif encoding == "text":
        payload = side.with_suffix(".txt")
        payload.write_text("".join(f"{v:.9g}\n" for v in x), encoding="utf-8")
    else:
        raise ParameterError(f"unknown sample encoding {encoding!r}")
    if window_length is not None and (window_length < 1 or len(x) % window_length):
        raise DataError("sample count must be a multiple of the window length")
    write_json(side, {"format": SAMPLES_FORMAT, "version": SAMPLES_VERSION,
                      "sample_rate_hz": float(stream.sample_rate_hz), "channel_label": stream.channel_label,
                      "sample_count": int(len(x)), "encoding": encoding, "payload": payload.name,
                      "window_length": window_length, "extra": extra or {}})
    return side


def read_sample_header(path) -> dict:
    head = read_json(path)
    if head.get("format") != SAMPLES_FORMAT:
        raise FormatError(f"{path}: not a {SAMPLES_FORMAT} sidecar")
    version = head.get("version")
    if not isinstance(version, int) or version < 1 or version > SAMPLES_VERSION:
        raise FormatError(f"{path}: sample file version {version!r} is not supported "
                          f"(this build reads up to version {SAMPLES_VERSION})")
    for key in ("sample_rate_hz", "channel_label", "sample_count", "encoding", "payload"):
        if key not in head:
            raise FormatError(f"{path}: sidecar lacks {key!r}")
    return head


def read_samples(path) -> Tuple[SampleStream, dict]:
    side = Path(path)
    head = read_sample_header(side)
    payload = side.parent / head["payload"]
    if not payload.exists():
        raise FormatError(f"{side}: payload {payload.name} is missing")
    if head["encoding"] == "f32le":
        raw = payload.read_bytes()
        if len(raw) % 4:
            raise FormatError(f"{payload}: truncated float32 payload")
        x = np.frombuffer(raw, dtype="<f4").astype(float)
    elif head["encoding"] == "text":
        try:
            x = np.array([float(v) for v in payload.read_text(encoding="utf-8").split()])
        except ValueError as exc:
            raise FormatError(f"{payload}: {exc}") from None
    else:
        raise FormatError(f"{side}: unknown encoding {head['encoding']!r}")
    if len(x) != head["sample_count"]:
        raise FormatError(f"{side}: declares {head['sample_count']} samples, payload holds {len(x)}")
    try:
        stream = SampleStream(x, head["sample_rate_hz"], head["channel_label"])
    except ValueError as exc:
        raise FormatError(f"{side}: {exc}") from None
    return stream, head


def windows_of(stream: SampleStream, head: dict) -> np.ndarray:
    w = head.get("window_length") or len(stream)
    return stream.samples.reshape(-1, w)


# --- low-rate power series ------------------------------------------------------------

def write_power_series(path, watts, period_s: float = 6.0, start_s: float = 0.0) -> None:
    w = np.asarray(watts, dtype=float)
    lines = [f"{start_s + k * period_s:.3f} {v:.6f}\n" for k, v in enumerate(w)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_power_series(path, period_s: float = 6.0, max_gap_s: float = 60.0):
    """Timestamped ``seconds watts`` text onto a regular ``period_s`` grid.

    Each grid point takes the most recent reading no older than ``max_gap_s``;
    points with no such reading are 0 W and flagged in the returned gap mask.
    Returns ``(grid_seconds, watts, gap_mask)``.
    """
    times, values = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'seconds watts'")
        try:
            t, v = float(parts[0]), float(parts[1])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric field") from None
        if not np.isfinite(t) or not np.isfinite(v):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        times.append(t)
        values.append(v)
    if not times:
        raise DataError(f"{path}: empty power series")
    t = np.asarray(times)
    if np.any(np.diff(t) <= 0):
        raise FormatError(f"{path}: timestamps must strictly increase")
    v = np.asarray(values)
    grid = t[0] + period_s * np.arange(int(np.floor((t[-1] - t[0]) / period_s + 1e-9)) + 1)
    idx = np.searchsorted(t, grid + 1e-9, side="right") - 1
    age = grid - t[idx]
    gap = age > max_gap_s
    watts = np.where(gap, 0.0, v[idx])
    return grid, watts, gap


# --- manifests ----------------------------------------------------------------------------

def write_manifest(directory, rows: List[dict], task: str, seed: int, config: dict) -> Path:
    path = Path(directory) / "manifest.json"
    write_json(path, {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "task": task, "seed": seed,
                      "config": config, "rows": rows})
    return path


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise DataError(f"{directory}: no manifest.json")
    doc = read_json(path)
    if doc.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path}: not a corpus manifest")
    if not isinstance(doc.get("version"), int) or doc["version"] > MANIFEST_VERSION:
        raise FormatError(f"{path}: manifest version {doc.get('version')!r} is not supported")
    for row in doc.get("rows", []):
        if not (Path(directory) / row["file"]).exists():
            raise DataError(f"{path}: listed file {row['file']} is missing")
    return doc


# --- run configuration ------------------------------------------------------------------------

DEFAULT_CONFIG: Dict[str, dict] = {
    "hif": {
        "per_class": 1500,            # windows per class (HIF, transient, normal)
        "epochs": 40,
        "learning_rate": 0.01,
        "batch_size": 32,
        "test_fraction": 0.25,
    },
    "loadid": {
        "per_class": 200,             # switching events per appliance
        "hidden": 16,
        "epochs": 100,
        "learning_rate": 0.01,
        "batch_size": 32,
        "test_fraction": 0.25,
    },
    "disagg": {
        "target": "kettle",
        "windows": 20000,             # training windows (half household, half augmented)
        "window_length": 128,         # samples at 1/6 Hz
        "latent": 16,
        "lambda": 0.1,
        "epochs": 80,
        "learning_rate": 0.002,
        "batch_size": 64,
        "test_days": 7.0,             # held-out household days
    },
    "pq": {
        "nominal_rms_v": 230.0,
        "swell_lo": 1.10, "swell_hi": 1.80, "dip_lo": 0.10, "dip_hi": 0.90,
        "interruption": 0.10, "rapid_change_rate": 0.05,
    },
    "pipeline": {
        "duration_s": 30.0,
        "capacity": 8,
        "latency_budget_ms": 115.2,
        "realtime": True,
    },
    "simulate": {
        "hif_stream_s": 2.0,          # length of example HIF streams
    },
}


def _coerce(value, default, key):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, (int, float)) and not isinstance(default, bool):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return type(default)(value) if isinstance(default, float) else value
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    raise ConfigError(f"config key {key} expects {type(default).__name__}, got {value!r}")


def load_config(path=None, env: Optional[dict] = None) -> Dict[str, dict]:
    """Defaults, overlaid by a JSON file, overlaid by ``GRIDSENSE_<SECTION>_<KEY>`` variables.

    Environment values are parsed as JSON when possible (``10``, ``true``,
    ``0.5``) and used as raw strings otherwise. Unknown sections or keys are
    rejected from both sources.
    """
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        doc = read_json(path)
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: configuration must be an object")
        for section, values in doc.items():
            if section not in cfg or not isinstance(values, dict):
                raise ConfigError(f"unknown config section {section!r}")
            for key, value in values.items():
                if key not in cfg[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                cfg[section][key] = _coerce(value, DEFAULT_CONFIG[section][key], f"{section}.{key}")
    env = os.environ if env is None else env
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX) or name == ENV_PREFIX + "SEED":
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section = next((s for s in cfg if rest.startswith(s + "_")), None)
        if section is None or rest[len(section) + 1:] not in cfg[section]:
            raise ConfigError(f"environment variable {name} names no config key")
        key = rest[len(section) + 1:]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg[section][key] = _coerce(value, DEFAULT_CONFIG[section][key], f"{section}.{key}")
    return cfg
