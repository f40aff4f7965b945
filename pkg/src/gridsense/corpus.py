"""Corpus generation on disk, dataset loading, and the per-task train/evaluate routines."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import simgen
from .detectors import (HIF3_LABELS, ConfusionMatrix, build_hif_cnn, build_load_mlp, confusion_table,
                        evaluate, evaluate_multiclass)
from .disagg import CVAE, disaggregate_series, score_series, train_disagg
from .errors import DataError
from .formats import (read_manifest, read_power_series, read_samples, windows_of, write_manifest,
                      write_power_series, write_samples)
from .hif_features import window_feature_map
from .load_features import LOAD_RATE_HZ
from .nn import Sequential, TrainConfig, train
from .signal import SampleStream

LOAD_PRE = 1500      # samples kept before a load event
LOAD_POST = 3500     # samples kept from the event on
TASKS = ("hif2", "hif3", "loadid", "disagg")


def _split(n: int, test_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def parse_task(task: str) -> Tuple[str, Optional[str]]:
    if task in ("hif2", "hif3", "loadid"):
        return task, None
    if task.startswith("disagg:") and len(task) > 7:
        return "disagg", task[7:]
    raise DataError(f"unknown task {task!r}; expected hif2, hif3, loadid or disagg:<appliance>")


# --- simulation to disk ----------------------------------------------------------------

def simulate_hif(out: Path, cfg: dict, seed: int) -> List[dict]:
    (out / "hif").mkdir(parents=True, exist_ok=True)
    windows, labels, meta = simgen.gen_hif_windows(cfg["hif"]["per_class"], seed)
    rows = []
    groups: Dict[str, List[int]] = {}
    for i, m in enumerate(meta):
        key = m["label"] if m["label"] != "HIF" else f"HIF_{m['surface']}_{int(m['ratio'])}"
        groups.setdefault(key, []).append(i)
    for key in sorted(groups):
        idx = groups[key]
        stream = SampleStream(windows[idx].ravel(), simgen.HIF_RATE_HZ, "current")
        name = f"hif/{key}.json"
        write_samples(out / name, stream, window_length=windows.shape[1])
        params = {"windows": len(idx)}
        first = meta[idx[0]]
        if first["label"] == "HIF":
            params.update(surface=first["surface"], ratio=first["ratio"])
        if first["label"] == "transient":
            params["kinds"] = [meta[i]["kind"] for i in idx]
        rows.append({"file": name, "kind": "hif_windows", "label": first["label"], "seed": seed,
                     "params": params})
    dur = cfg["simulate"]["hif_stream_s"]
    for name, kwargs in (("hif/stream_fault.json", {"fault_start_s": 0.0}),
                         ("hif/stream_clean.json", {"fault_start_s": dur * 10})):
        s = simgen.gen_hif_stream(dur, seed=seed + 1, **kwargs)
        write_samples(out / name, s)
        rows.append({"file": name, "kind": "stream", "label": "HIF" if "fault" in name else "normal",
                     "seed": seed + 1, "params": {"duration_s": dur, "surface": "tree", "ratio": 10.0}})
    return rows


def simulate_loadid(out: Path, cfg: dict, seed: int) -> List[dict]:
    (out / "loadid").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for name in simgen.APPLIANCES:
        cur, vol = [], []
        for _ in range(cfg["loadid"]["per_class"]):
            ev = simgen.gen_load_event(name, seed=int(rng.integers(2 ** 63)))
            a, b = ev.event_index - LOAD_PRE, ev.event_index + LOAD_POST
            cur.append(ev.current.samples[a:b])
            vol.append(ev.voltage.samples[a:b])
        for channel, data in (("current", cur), ("voltage", vol)):
            fname = f"loadid/{name}_{channel}.json"
            write_samples(out / fname, SampleStream(np.concatenate(data), LOAD_RATE_HZ, channel),
                          window_length=LOAD_PRE + LOAD_POST)
            rows.append({"file": fname, "kind": "load_records", "label": name, "seed": seed,
                         "params": {"channel": channel, "records": len(data), "event_offset": LOAD_PRE}})
    ev = simgen.gen_load_event("heater", seed=seed + 7, duration_s=2.0)
    for channel, s in (("current", ev.current), ("voltage", ev.voltage)):
        fname = f"loadid/example_{channel}.json"
        write_samples(out / fname, s)
        rows.append({"file": fname, "kind": "stream", "label": "heater", "seed": seed + 7,
                     "params": {"channel": channel, "event_index": ev.event_index}})
    return rows


def simulate_disagg(out: Path, cfg: dict, seed: int) -> List[dict]:
    (out / "disagg").mkdir(parents=True, exist_ok=True)
    d = cfg["disagg"]
    target, T = d["target"], d["window_length"]
    rng = np.random.default_rng(seed)
    rows = []
    # household series for the natural half of training, one file pair per week
    needed = d["windows"] // 2
    have, k = 0, 0
    while have < needed:
        s = int(rng.integers(2 ** 63))
        house = simgen.gen_house_series(7.0, s)
        for kind, series in (("aggregate", house.aggregate), (target, house.components[target])):
            fname = f"disagg/train_house{k}_{kind}.txt"
            write_power_series(out / fname, series)
            rows.append({"file": fname, "kind": "power_series", "label": kind, "seed": s,
                         "params": {"split": "train", "house": k, "days": 7.0}})
        have += len(simgen.house_windows(house, target, T, hop=T // 2))
        k += 1
    aug = simgen.gen_disagg_corpus(target, d["windows"] - needed, T, int(rng.integers(2 ** 63)))
    for kind, arr in (("aggregate", [w.aggregate for w in aug]), (target, [w.target for w in aug])):
        fname = f"disagg/augmented_{kind}.txt"
        write_power_series(out / fname, np.concatenate(arr))
        rows.append({"file": fname, "kind": "power_series", "label": kind, "seed": seed,
                     "params": {"split": "train", "window_length": T, "windows": len(aug)}})
    s = int(rng.integers(2 ** 63))
    house = simgen.gen_house_series(d["test_days"], s)
    for kind, series in (("aggregate", house.aggregate), (target, house.components[target])):
        fname = f"disagg/test_house_{kind}.txt"
        write_power_series(out / fname, series)
        rows.append({"file": fname, "kind": "power_series", "label": kind, "seed": s,
                     "params": {"split": "test", "days": d["test_days"]}})
    return rows


def simulate_pq(out: Path, cfg: dict, seed: int) -> List[dict]:
    (out / "pq").mkdir(parents=True, exist_ok=True)
    nominal = cfg["pq"]["nominal_rms_v"]
    fs = 10000.0
    scripts = {
        "swell": [(0.5, 0.8, 1.25)],
        "dip": [(0.5, 0.9, 0.6)],
        "interruption": [(0.5, 0.7, 0.4), (0.7, 0.9, 0.05), (0.9, 1.1, 0.4)],
        "clean": [],
    }
    rows = []
    for name, segments in scripts.items():
        env = simgen.rms_envelope(2.0, fs, segments)
        v = simgen.gen_voltage(nominal, duration_s=2.0, sample_rate_hz=fs, envelope=env,
                               noise_snr_db=70.0, seed=seed)
        fname = f"pq/{name}.json"
        write_samples(out / fname, v, extra={"nominal_rms_v": nominal})
        rows.append({"file": fname, "kind": "stream", "label": name, "seed": seed,
                     "params": {"segments": [list(s) for s in segments], "nominal_rms_v": nominal}})
    return rows


SIMULATORS = {"hif": simulate_hif, "loadid": simulate_loadid, "disagg": simulate_disagg, "pq": simulate_pq}


def simulate(out_dir, task: str, cfg: dict, seed: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = list(SIMULATORS) if task == "all" else [task]
    rows: List[dict] = []
    for t in tasks:
        if t not in SIMULATORS:
            raise DataError(f"unknown simulation task {t!r}")
        rows.extend(SIMULATORS[t](out, cfg, seed))
    return write_manifest(out, rows, task, seed, cfg)


# --- datasets ------------------------------------------------------------------------------

def load_hif_dataset(corpus_dir) -> Tuple[np.ndarray, np.ndarray]:
    """Feature maps (N, 8, 6) and 3-class labels from a corpus directory."""
    doc = read_manifest(corpus_dir)
    maps, labels = [], []
    for row in doc["rows"]:
        if row["kind"] != "hif_windows":
            continue
        stream, head = read_samples(Path(corpus_dir) / row["file"])
        w = windows_of(stream, head)
        maps.append(window_feature_map(w, stream.sample_rate_hz))
        labels.append(np.full(len(w), HIF3_LABELS.index(row["label"])))
    if not maps:
        raise DataError(f"{corpus_dir}: corpus holds no HIF windows")
    return np.concatenate(maps), np.concatenate(labels)


def load_loadid_dataset(corpus_dir) -> Tuple[np.ndarray, np.ndarray]:
    doc = read_manifest(corpus_dir)
    by_label: Dict[str, Dict[str, Tuple[SampleStream, dict, dict]]] = {}
    for row in doc["rows"]:
        if row["kind"] == "load_records":
            stream, head = read_samples(Path(corpus_dir) / row["file"])
            by_label.setdefault(row["label"], {})[row["params"]["channel"]] = (stream, head, row)
    if not by_label:
        raise DataError(f"{corpus_dir}: corpus holds no load records")
    feats, labels = [], []
    for name in simgen.APPLIANCES:
        if name not in by_label:
            continue
        cur_s, cur_h, row = by_label[name]["current"]
        vol_s, vol_h, _ = by_label[name]["voltage"]
        offset = row["params"]["event_offset"]
        for ci, vi in zip(windows_of(cur_s, cur_h), windows_of(vol_s, vol_h)):
            ev = simgen.LoadEvent(SampleStream(vi, LOAD_RATE_HZ, "voltage"), SampleStream(ci, LOAD_RATE_HZ, "current"),
                                  offset, name, 0.0)
            feats.append(simgen.load_event_features(ev))
            labels.append(simgen.APPLIANCES.index(name))
    return np.array(feats), np.array(labels)


def load_disagg_dataset(corpus_dir, target: str, window_length: int):
    """(training windows, household target scale, test aggregate, test truth)."""
    doc = read_manifest(corpus_dir)
    series: Dict[Tuple[str, str], np.ndarray] = {}
    meta: Dict[str, dict] = {}
    for row in doc["rows"]:
        if row["kind"] != "power_series":
            continue
        _, watts, _ = read_power_series(Path(corpus_dir) / row["file"])
        stem = row["file"].rsplit("_", 1)[0]
        series[(stem, row["label"])] = watts
        meta[stem] = row["params"]
    train_windows: List[simgen.DisaggWindow] = []
    natural = []
    test_agg = test_truth = None
    T = window_length
    for stem, params in sorted(meta.items()):
        if (stem, target) not in series:
            continue
        agg, truth = series[(stem, "aggregate")], series[(stem, target)]
        if params["split"] == "test":
            test_agg, test_truth = agg, truth
        elif "window_length" in params:
            for a, y in zip(agg.reshape(-1, params["window_length"]), truth.reshape(-1, params["window_length"])):
                train_windows.append(simgen.DisaggWindow(a, y, target))
        else:
            natural.append(truth)
            for s in range(0, len(agg) - T + 1, T // 2):
                train_windows.append(simgen.DisaggWindow(agg[s:s + T], truth[s:s + T], target))
    if not train_windows:
        raise DataError(f"{corpus_dir}: corpus holds no disaggregation windows for {target!r}")
    scale = float(np.std(np.concatenate(natural))) if natural else None
    return train_windows, scale, test_agg, test_truth


# --- training and evaluation ------------------------------------------------------------------

def classification_report(net: Sequential, x: np.ndarray, y: np.ndarray, task: str) -> dict:
    probs = net.predict(x)
    pred = probs.argmax(axis=1)
    classes = net.output_shape[0]
    table = confusion_table(y, pred, classes)
    acc = 100.0 * float(np.mean(pred == y))
    chance = 100.0 / classes
    rep = {"task": task, "samples": int(len(y)), "accuracy_pct": round(acc, 4),
           "confusion": table.tolist(), "labels": list(net.meta.get("labels", [])),
           "per_class_pct": np.round(evaluate_multiclass(table), 4).tolist() if np.all(table.sum(1)) else None,
           "near_chance": bool(acc < chance + 10.0)}
    if classes == 2:
        rep["binary"] = evaluate(ConfusionMatrix.from_labels(y, pred, positive=0)).as_record()
    return rep


def train_hif(x_maps, labels3, classes: int, cfg: dict, seed: int):
    c = cfg["hif"]
    y = labels3 if classes == 3 else np.where(labels3 == 0, 0, 1)
    tr, te = _split(len(y), c["test_fraction"], seed)
    net = build_hif_cnn(classes, seed)
    x = x_maps[:, None]
    hist = train(net, x[tr], y[tr], TrainConfig("adam", c["learning_rate"], c["batch_size"], c["epochs"], seed))
    net.meta["trained"] = True
    rep = classification_report(net, x[te], y[te], f"hif{classes}")
    rep["train_loss"] = [round(v, 6) for v in hist.loss]
    return net, rep


def train_loadid(feats, labels, cfg: dict, seed: int):
    c = cfg["loadid"]
    tr, te = _split(len(labels), c["test_fraction"], seed)
    mean, std = feats[tr].mean(axis=0), feats[tr].std(axis=0)
    std[std == 0] = 1.0
    net = build_load_mlp(c["hidden"], len(simgen.APPLIANCES), seed)
    net.meta.update(feature_mean=mean.tolist(), feature_std=std.tolist(), labels=list(simgen.APPLIANCES))
    hist = train(net, (feats[tr] - mean) / std, labels[tr],
                 TrainConfig("adam", c["learning_rate"], c["batch_size"], c["epochs"], seed))
    net.meta["trained"] = True
    rep = classification_report(net, (feats[te] - mean) / std, labels[te], "loadid")
    rep["train_loss"] = [round(v, 6) for v in hist.loss]
    return net, rep


def disagg_report(model: CVAE, test_agg, test_truth) -> dict:
    est = disaggregate_series(model, test_agg)
    score = score_series(test_truth, est)
    return {"task": f"disagg:{model.appliance_id}", "test_samples": int(len(test_agg)), **score.as_record()}


def train_disagg_task(windows, scale, test_agg, test_truth, cfg: dict, seed: int):
    d = cfg["disagg"]
    model = CVAE(d["window_length"], d["latent"], d["lambda"], seed, appliance_id=windows[0].appliance_id)
    hist = train_disagg(model, windows, TrainConfig("adam", d["learning_rate"], d["batch_size"], d["epochs"], seed),
                        target_scale=scale)
    rep = disagg_report(model, test_agg, test_truth) if test_agg is not None else {"task": "disagg"}
    rep["train_loss"] = [round(v, 6) for v in hist.total]
    return model, rep
