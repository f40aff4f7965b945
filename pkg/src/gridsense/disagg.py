"""Convolutional variational autoencoder for per-appliance disaggregation of low-rate power."""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, FormatError, ParameterError, ShapeError
from .nn import (Conv1D, Dense, Flatten, ReLU, Reshape, Sequential, TransposedConv1D, kl_gaussian, mse)
from .nn.network import MODEL_VERSION, from_document, to_document
from .nn.optim import Optimizer, TrainConfig
from .simgen import DisaggWindow

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
DEFAULT_LATENT = 16
DEFAULT_LAMBDA = 0.1
DEFAULT_T = 128


@dataclass
class LatentParams:
    mu: np.ndarray
    logvar: np.ndarray
    z: Optional[np.ndarray] = None
    eps: Optional[np.ndarray] = None


def decoder_base_length(T: int, k1: int = 5, k2: int = 4, stride: int = 2) -> int:
    """Length L0 fed to the transposed convolutions so that they emit exactly T samples."""
    # T = ((L0 - 1) * s + k1 - 1) * s + k2
    num = (T - k2) / stride + 1 - k1
    l0 = num / stride + 1
    if l0 < 1 or l0 != int(l0):
        raise ShapeError(f"window length {T} is not reachable by the decoder (need T = 4*L0 + 8)")
    return int(l0)


class CVAE:
    """Encoder conv(10, 6) -> ReLU -> conv(20, 4) -> ReLU -> (mu, logvar) heads;
    decoder dense -> ReLU -> tconv(10, 5, stride 2) -> tconv(1, 4, stride 2).
    """

    def __init__(self, T: int = DEFAULT_T, latent: int = DEFAULT_LATENT, lam: float = DEFAULT_LAMBDA,
                 seed: int = 0, filters=(10, 20), kernels=(6, 4), appliance_id: str = ""):
        if lam < 0:
            raise ParameterError("lambda must be >= 0")
        self.T, self.latent, self.lam = T, latent, lam
        self.appliance_id = appliance_id
        f1, f2 = filters
        k1, k2 = kernels
        rng = np.random.default_rng(seed)
        seeds = rng.integers(2 ** 31, size=4)
        self.encoder = Sequential([Conv1D(f1, k1), ReLU(), Conv1D(f2, k2), ReLU(), Flatten()], (1, T),
                                  seed=int(seeds[0]))
        flat = self.encoder.output_shape[0]
        self.mu_head = Sequential([Dense(latent, init="glorot")], (flat,), seed=int(seeds[1]))
        self.lv_head = Sequential([Dense(latent, init="glorot")], (flat,), seed=int(seeds[2]))
        l0 = decoder_base_length(T)
        self.decoder = Sequential([Dense(f2 * l0), ReLU(), Reshape((f2, l0)),
                                   TransposedConv1D(f1, 5, stride=2), TransposedConv1D(1, 4, stride=2),
                                   Flatten()], (latent,), seed=int(seeds[3]))
        if self.decoder.output_shape != (T,):
            raise ShapeError(f"decoder emits {self.decoder.output_shape}, expected ({T},)")
        self.input_mean, self.input_std, self.target_scale = 0.0, 1.0, 1.0
        self.trained = False
        self.config = {"filters": list(filters), "kernels": list(kernels)}

    # -- parts ---------------------------------------------------------------
    @property
    def parts(self) -> Dict[str, Sequential]:
        return {"encoder": self.encoder, "mu_head": self.mu_head, "lv_head": self.lv_head,
                "decoder": self.decoder}

    def named_params(self) -> Dict[str, np.ndarray]:
        return {f"{p}.{k}": v for p, net in self.parts.items() for k, v in net.named_params().items()}

    def named_grads(self) -> Dict[str, np.ndarray]:
        return {f"{p}.{k}": v for p, net in self.parts.items() for k, v in net.named_grads().items()}

    # -- normalisation -------------------------------------------------------
    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.input_mean) / self.input_std

    def denormalize(self, xn: np.ndarray) -> np.ndarray:
        return np.asarray(xn, dtype=float) * self.input_std + self.input_mean

    # -- forward pieces ------------------------------------------------------
    def _batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None]
        if x.shape[-1] != self.T:
            raise ShapeError(f"window length {x.shape[-1]} does not match model length {self.T}")
        return x.reshape(-1, 1, self.T)

    def encode(self, x_norm: np.ndarray, training: bool = False) -> LatentParams:
        h = self.encoder.forward(self._batch(x_norm), training)
        mu = self.mu_head.forward(h, training)
        logvar = self.lv_head.forward(h, training)
        return LatentParams(mu, logvar)

    def decode(self, z: np.ndarray, training: bool = False) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.latent:
            raise ShapeError(f"latent vectors must have {self.latent} entries")
        return self.decoder.forward(z, training)

    def loss(self, x_norm: np.ndarray, y_scaled: np.ndarray, eps: np.ndarray, lam: Optional[float] = None,
             training: bool = False, backward: bool = False) -> Tuple[float, float, float]:
        """(total, estimation, variational) for fixed standard-normal draws ``eps``.

        With ``backward`` set, parameter gradients are left in every layer.
        """
        lam = self.lam if lam is None else lam
        y = np.atleast_2d(np.asarray(y_scaled, dtype=float))
        lp = self.encode(x_norm, training)
        lv = np.clip(lp.logvar, LOGVAR_MIN, LOGVAR_MAX)
        sigma = np.exp(0.5 * lv)
        z = lp.mu + sigma * eps
        y_hat = self.decode(z, training)
        est, d_yhat = mse(y_hat, y)
        var, (d_mu_kl, d_lv_kl) = kl_gaussian(lp.mu, lv)
        if backward:
            dz = self.decoder.backward(d_yhat)
            d_mu = dz + lam * d_mu_kl
            inside = (lp.logvar > LOGVAR_MIN) & (lp.logvar < LOGVAR_MAX)
            d_lv = (dz * eps * 0.5 * sigma + lam * d_lv_kl) * inside
            dh = self.mu_head.backward(d_mu) + self.lv_head.backward(d_lv)
            self.encoder.backward(dh)
        return est + lam * var, est, var

    # -- inference -----------------------------------------------------------
    def disaggregate(self, aggregate: np.ndarray) -> np.ndarray:
        """Appliance power in watts: normalise, z = mu, decode, rescale, clamp at 0."""
        if not self.trained:
            warnings.warn("disaggregating with an untrained model", RuntimeWarning)
        x = np.asarray(aggregate, dtype=float)
        single = x.ndim == 1
        mu = self.encode(self.normalize(x)).mu
        y = np.maximum(self.decode(mu) * self.target_scale, 0.0)
        return y[0] if single else y

    # -- persistence ---------------------------------------------------------
    def to_document(self) -> dict:
        return {"format": "gridsense-cvae", "version": MODEL_VERSION, "T": self.T, "latent": self.latent,
                "lambda": self.lam, "appliance_id": self.appliance_id, "config": self.config,
                "input_mean": self.input_mean, "input_std": self.input_std,
                "target_scale": self.target_scale, "trained": self.trained,
                "parts": {k: to_document(v) for k, v in self.parts.items()}}

    @classmethod
    def from_document(cls, doc: dict) -> "CVAE":
        if doc.get("format") != "gridsense-cvae":
            raise FormatError("not a gridsense-cvae document")
        if not isinstance(doc.get("version"), int) or doc["version"] > MODEL_VERSION:
            raise FormatError(f"cvae version {doc.get('version')!r} is not supported (this build "
                              f"reads up to version {MODEL_VERSION})")
        cfg = doc.get("config", {})
        model = cls(doc["T"], doc["latent"], doc["lambda"], 0, tuple(cfg.get("filters", (10, 20))),
                    tuple(cfg.get("kernels", (6, 4))), doc.get("appliance_id", ""))
        model.encoder = from_document(doc["parts"]["encoder"])
        model.mu_head = from_document(doc["parts"]["mu_head"])
        model.lv_head = from_document(doc["parts"]["lv_head"])
        model.decoder = from_document(doc["parts"]["decoder"])
        model.input_mean, model.input_std = doc["input_mean"], doc["input_std"]
        model.target_scale = doc["target_scale"]
        model.trained = bool(doc.get("trained", False))
        return model

    def dumps(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, indent=1)

    @classmethod
    def loads(cls, text: str) -> "CVAE":
        try:
            return cls.from_document(json.loads(text))
        except json.JSONDecodeError as exc:
            raise FormatError(f"model file is not valid JSON: {exc}") from None


def reparameterize(params: LatentParams, seed=0) -> np.ndarray:
    """z = mu + exp(logvar / 2) * eps with eps drawn from the seeded generator.

    Finite log-variances are clamped to [-10, 10]; a log-variance of -inf is
    the zero-variance limit and yields z = mu exactly.
    """
    mu = np.asarray(params.mu, dtype=float)
    raw = np.asarray(params.logvar, dtype=float)
    sigma = np.where(np.isneginf(raw), 0.0, np.exp(0.5 * np.clip(raw, LOGVAR_MIN, LOGVAR_MAX)))
    eps = np.random.default_rng(seed).standard_normal(mu.shape)
    params.eps = eps
    params.z = mu + sigma * eps
    return params.z


def cvae_loss(x_norm, y_scaled, model: CVAE, lam: Optional[float] = None, seed=0):
    """(total, estimation, variational) with a seeded reparameterised draw."""
    b = np.atleast_2d(np.asarray(x_norm)).shape[0]
    eps = np.random.default_rng(seed).standard_normal((b, model.latent))
    return model.loss(x_norm, y_scaled, eps, lam)


@dataclass
class DisaggHistory:
    total: List[float] = field(default_factory=list)
    estimation: List[float] = field(default_factory=list)
    variational: List[float] = field(default_factory=list)


def _stack(windows: Sequence[DisaggWindow]) -> Tuple[np.ndarray, np.ndarray, str]:
    if not windows:
        raise DataError("no training windows")
    ids = {w.appliance_id for w in windows}
    if len(ids) != 1:
        raise DataError(f"windows mix appliances {sorted(ids)}; train one model per appliance")
    return (np.stack([w.aggregate for w in windows]), np.stack([w.target for w in windows]), ids.pop())


def train_disagg(model: CVAE, windows: Sequence[DisaggWindow], config: TrainConfig = TrainConfig(
        "adam", 1e-3, 64, 20, 0), kl_warmup_epochs: int = 0,
                 target_scale: Optional[float] = None) -> DisaggHistory:
    """Fit the model in place.

    Normalisation statistics come from the training aggregates (zero mean,
    unit variance); targets are divided by ``target_scale`` (default: their
    standard deviation). With
    ``kl_warmup_epochs`` > 0 the KL weight ramps linearly up to lambda.
    """
    x, y, appliance = _stack(windows)
    if model.appliance_id and model.appliance_id != appliance:
        raise DataError(f"model is for {model.appliance_id!r}, windows are {appliance!r}")
    model.appliance_id = appliance
    model.input_mean = float(x.mean())
    model.input_std = float(x.std()) or 1.0
    model.target_scale = float(target_scale or y.std()) or 1.0
    xn = model.normalize(x)
    ys = y / model.target_scale
    rng = np.random.default_rng(config.seed)
    opt = Optimizer(config)
    hist = DisaggHistory()
    n = len(xn)
    for epoch in range(config.epochs):
        lam = model.lam if kl_warmup_epochs <= 0 else model.lam * min(1.0, (epoch + 1) / kl_warmup_epochs)
        order = rng.permutation(n)
        sums = np.zeros(3)
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            eps = rng.standard_normal((len(idx), model.latent))
            parts = model.loss(xn[idx], ys[idx], eps, lam, training=True, backward=True)
            opt.step(model.named_params(), model.named_grads())
            sums += np.array(parts) * len(idx)
        t, e, v = sums / n
        hist.total.append(float(t))
        hist.estimation.append(float(e))
        hist.variational.append(float(v))
    model.trained = True
    return hist


@dataclass(frozen=True)
class DisaggScore:
    mae: float             # watts
    sae: Optional[float]   # dimensionless; None when the true energy is zero

    def as_record(self) -> dict:
        return {"mae_w": round(self.mae, 6), "sae": None if self.sae is None else round(self.sae, 6)}


def mae(y, y_hat) -> float:
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ShapeError("series lengths differ")
    return float(np.mean(np.abs(y - y_hat)))


def sae(y, y_hat) -> float:
    """|E - E_hat| / E over the whole series."""
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ShapeError("series lengths differ")
    e = float(np.sum(y))
    if e <= 0:
        raise DataError("SAE is undefined when the true energy is zero")
    return abs(e - float(np.sum(y_hat))) / e


def score_series(y, y_hat) -> DisaggScore:
    """MAE and SAE of an estimated series; SAE is left undefined when the appliance never ran."""
    y = np.asarray(y, dtype=float)
    return DisaggScore(mae(y, y_hat), sae(y, y_hat) if np.sum(y) > 0 else None)


def score(model: CVAE, windows: Sequence[DisaggWindow]) -> DisaggScore:
    x, y, _ = _stack(windows)
    y_hat = model.disaggregate(x)
    return DisaggScore(mae(y, y_hat), sae(y, y_hat))


class Router:
    """Dispatch windows to the model of their appliance."""

    def __init__(self, models: Dict[str, CVAE]):
        self.models = dict(models)

    def disaggregate(self, window: DisaggWindow) -> np.ndarray:
        try:
            model = self.models[window.appliance_id]
        except KeyError:
            raise DataError(f"no model for appliance {window.appliance_id!r}") from None
        return model.disaggregate(window.aggregate)


def grid_search(train_windows, val_windows, latents=(DEFAULT_LATENT,), lambdas=(DEFAULT_LAMBDA,),
                kernels=((6, 4),), config: TrainConfig = TrainConfig("adam", 1e-3, 64, 10, 0)) -> List[dict]:
    """Train one model per (D, lambda, kernels) and score it on validation windows, best first."""
    T = len(train_windows[0].aggregate)
    results = []
    for d, lam, ks in itertools.product(latents, lambdas, kernels):
        model = CVAE(T, d, lam, config.seed, kernels=ks)
        train_disagg(model, train_windows, config)
        s = score(model, val_windows)
        results.append({"latent": d, "lambda": lam, "kernels": list(ks), **s.as_record()})
    return sorted(results, key=lambda r: r["mae_w"])


def activation_iou(y, y_hat, threshold_w: float = 200.0) -> float:
    """Intersection-over-union of the samples where each series exceeds ``threshold_w``."""
    a = np.asarray(y) > threshold_w
    b = np.asarray(y_hat) > threshold_w
    union = np.sum(a | b)
    return float(np.sum(a & b) / union) if union else 1.0


def disaggregate_series(model: CVAE, series: np.ndarray, hop: Optional[int] = None) -> np.ndarray:
    """Sliding-window disaggregation of a long series; overlapping estimates are averaged.

    The tail is covered by one extra window aligned to the end of the series.
    """
    x = np.asarray(series, dtype=float)
    T = model.T
    if len(x) < T:
        raise ShapeError(f"series of {len(x)} samples is shorter than the window ({T})")
    hop = hop or T // 4
    starts = list(range(0, len(x) - T + 1, hop))
    if starts[-1] != len(x) - T:
        starts.append(len(x) - T)
    est = model.disaggregate(np.stack([x[s:s + T] for s in starts]))
    acc = np.zeros(len(x))
    cnt = np.zeros(len(x))
    for s, e in zip(starts, est):
        acc[s:s + T] += e
        cnt[s:s + T] += 1
    return acc / cnt
