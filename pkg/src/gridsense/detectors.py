"""HIF CNN classifiers, the load-identification MLP and detection metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, ParameterError, ShapeError
from .hif_features import FRAMES_PER_MAP, FeatureMap
from .nn import (BatchNorm, Conv2D, Dense, Flatten, MaxPool2x2, ReLU, Sequential, Softmax)

HIF2_LABELS = ("HIF", "healthy")
HIF3_LABELS = ("HIF", "transient", "normal")
MAP_BANDS = 8
LOAD_FEATURES = 9


def build_hif_cnn(classes: int = 2, seed: int = 0) -> Sequential:
    """1x8x6 map -> conv(4, 2x2) -> BN -> ReLU -> pool -> conv(6, 2x2) -> BN -> ReLU -> dense -> softmax.

    Shape walk: 8x6 -> 7x5 -> 3x2 (floor pooling) -> 2x1, so 6*2*1 = 12 flat features.
    """
    if classes not in (2, 3):
        raise ParameterError("the HIF classifier has 2 or 3 classes")
    net = Sequential([
        Conv2D(4, (2, 2)), BatchNorm(), ReLU(), MaxPool2x2(),
        Conv2D(6, (2, 2)), BatchNorm(), ReLU(),
        Flatten(), Dense(classes, init="glorot"), Softmax(),
    ], (1, MAP_BANDS, FRAMES_PER_MAP), seed=seed)
    net.meta = {"task": f"hif{classes}", "labels": list(HIF2_LABELS if classes == 2 else HIF3_LABELS),
                "trained": False}
    return net


def build_load_mlp(hidden: int = 16, classes: int = 7, seed: int = 0) -> Sequential:
    if hidden < 1 or classes < 2:
        raise ParameterError("hidden must be >= 1 and classes >= 2")
    net = Sequential([Dense(hidden), ReLU(), Dense(classes, init="glorot"), Softmax()],
                     (LOAD_FEATURES,), seed=seed)
    net.meta = {"task": "loadid", "trained": False,
                "feature_mean": [0.0] * LOAD_FEATURES, "feature_std": [1.0] * LOAD_FEATURES}
    return net


def argmax_one_hot(z: np.ndarray) -> np.ndarray:
    """y_i = 1 iff z_i is the unique maximum of its row (all zeros on a tie)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    top = z.max(axis=1, keepdims=True)
    hits = z == top
    unique = hits.sum(axis=1, keepdims=True) == 1
    return (hits & unique).astype(float)


@dataclass(frozen=True)
class HifVerdict:
    label: str
    probability: float
    feature_map_span: Tuple[int, int]
    warning: Optional[str] = None

    def as_record(self, sample_rate_hz: float) -> dict:
        rec = {"label": self.label, "probability": round(self.probability, 6),
               "span_samples": list(self.feature_map_span),
               "timestamp_s": round(self.feature_map_span[0] / sample_rate_hz, 6)}
        if self.warning:
            rec["warning"] = self.warning
        return rec


def _map_input(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[-2:] != (MAP_BANDS, FRAMES_PER_MAP):
        raise ShapeError(f"feature maps must be {MAP_BANDS}x{FRAMES_PER_MAP}, got {values.shape}")
    return values.reshape(-1, 1, MAP_BANDS, FRAMES_PER_MAP)


def classify_hif_batch(maps: Sequence[FeatureMap], model: Sequential) -> list:
    if not maps:
        return []
    probs = model.predict(_map_input(np.stack([m.values for m in maps])))
    labels = model.meta.get("labels", list(HIF2_LABELS))
    warning = None if model.meta.get("trained") else "untrained model"
    out = []
    for m, p in zip(maps, probs):
        k = int(np.argmax(p))
        out.append(HifVerdict(labels[k], float(p[k]), m.span, warning))
    return out


def classify_hif(fmap: FeatureMap, model: Sequential) -> HifVerdict:
    return classify_hif_batch([fmap], model)[0]


def identify_load(features: np.ndarray, model: Sequential) -> np.ndarray:
    """Class probabilities for raw (unstandardised) load feature vectors."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != LOAD_FEATURES:
        raise ShapeError(f"load features must have {LOAD_FEATURES} entries")
    mean = np.asarray(model.meta["feature_mean"])
    std = np.asarray(model.meta["feature_std"])
    return model.predict((x - mean) / std)


# --- metrics ---------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    TP: int
    TN: int
    FP: int
    FN: int

    def __post_init__(self):
        if min(self.TP, self.TN, self.FP, self.FN) < 0:
            raise DataError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.TP + self.TN + self.FP + self.FN

    @classmethod
    def from_labels(cls, truth, predicted, positive=0) -> "ConfusionMatrix":
        t = np.asarray(truth) == positive
        p = np.asarray(predicted) == positive
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))


SECURITY_NOTE = "security and safety share the formula TN/(TN+FN) as printed in the source definitions"


@dataclass(frozen=True)
class MetricReport:
    """Percentages; ``None`` marks a metric whose denominator is zero."""

    accuracy: Optional[float]
    dependability: Optional[float]
    security: Optional[float]
    safety: Optional[float]
    sensibility: Optional[float]
    note: str = SECURITY_NOTE

    def as_record(self) -> dict:
        keys = ("accuracy", "dependability", "security", "safety", "sensibility")
        rec = {f"{k}_pct": (None if getattr(self, k) is None else round(getattr(self, k), 4)) for k in keys}
        rec["note"] = self.note
        return rec


def _pct(num: int, den: int) -> Optional[float]:
    return None if den == 0 else 100.0 * num / den


def evaluate(cm: ConfusionMatrix) -> MetricReport:
    if cm.total == 0:
        raise DataError("cannot evaluate an empty confusion matrix")
    return MetricReport(
        accuracy=_pct(cm.TP + cm.TN, cm.total),
        dependability=_pct(cm.TP, cm.TP + cm.FP),
        security=_pct(cm.TN, cm.TN + cm.FN),
        safety=_pct(cm.TN, cm.TN + cm.FN),
        sensibility=_pct(cm.TP, cm.TP + cm.FN),
    )


def confusion_table(truth, predicted, classes: int) -> np.ndarray:
    table = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(table, (np.asarray(truth, dtype=int), np.asarray(predicted, dtype=int)), 1)
    return table


def evaluate_multiclass(table) -> np.ndarray:
    """Row-normalised confusion table in percent (rows = true class)."""
    t = np.asarray(table, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] < 2:
        raise ShapeError("need a square table with at least 2 classes")
    rows = t.sum(axis=1, keepdims=True)
    if np.any(rows == 0):
        raise DataError("every class needs at least one sample")
    return 100.0 * t / rows
