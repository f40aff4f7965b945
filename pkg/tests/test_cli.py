import json

import numpy as np
import pytest

from gridsense import corpus, simgen
from gridsense.cli import build_parser, main
from gridsense.detectors import build_hif_cnn
from gridsense.disagg import mae, sae
from gridsense.errors import DataError
from gridsense.formats import load_config, read_manifest, read_power_series, write_json
from gridsense.nn import to_document

SMALL = {
    "hif": {"per_class": 45, "epochs": 4},
    "loadid": {"per_class": 12, "epochs": 60},
    "disagg": {"windows": 200, "window_length": 64, "latent": 4, "epochs": 1, "test_days": 0.5},
    "pipeline": {"duration_s": 2.0},
    "simulate": {"hif_stream_s": 1.0},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, [json.loads(line) for line in out.splitlines() if line.strip()], err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_json(d / "small.json", SMALL)
    assert main(["simulate", "--task", "all", "--out", str(d / "corpus"), "--config", str(d / "small.json"),
                 "--seed", "4"]) == 0
    return d


# --- exit codes ------------------------------------------------------------------------------

def test_usage_errors_exit_1(capsys, tmp_path):
    assert run(capsys, "simulate", "--bogus")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "simulate")[0] == 1                       # --out missing
    write_json(tmp_path / "bad.json", {"hif": {"epoch": 1}})
    code, _, err = run(capsys, "simulate", "--task", "pq", "--out", tmp_path / "o", "--config", tmp_path / "bad.json")
    assert code == 1 and "hif.epoch" in err


def test_data_errors_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "detect-pq", "--input", tmp_path / "missing.json")
    assert code == 2 and "error" in err
    code, _, _ = run(capsys, "train", "--task", "hif4", "--corpus", tmp_path, "--out", tmp_path)
    assert code == 2


def test_parse_task():
    assert corpus.parse_task("hif3") == ("hif3", None)
    assert corpus.parse_task("disagg:kettle") == ("disagg", "kettle")
    for bad in ("disagg:", "hif", ""):
        with pytest.raises(DataError):
            corpus.parse_task(bad)


def test_split_is_deterministic_partition():
    tr, te = corpus._split(100, 0.25, 3)
    assert len(te) == 25 and sorted(np.concatenate([tr, te]).tolist()) == list(range(100))
    tr2, te2 = corpus._split(100, 0.25, 3)
    np.testing.assert_array_equal(te, te2)
    assert len(corpus._split(3, 0.01, 0)[1]) == 1


# --- simulate ----------------------------------------------------------------------------------

def test_manifest_lists_every_sidecar(workdir):
    root = workdir / "corpus"
    doc = read_manifest(root)
    files = sorted(p.relative_to(root).as_posix() for p in root.rglob("*")
                   if p.is_file() and p.suffix in (".json", ".txt") and p.name != "manifest.json")
    assert sorted(r["file"] for r in doc["rows"]) == files
    assert doc["seed"] == 4


def test_hif_files_cover_every_surface_and_ratio(workdir):
    rows = [r for r in read_manifest(workdir / "corpus")["rows"] if r["kind"] == "hif_windows"]
    combos = {(r["params"]["surface"], int(r["params"]["ratio"])) for r in rows if r["label"] == "HIF"}
    assert combos == {(s, r) for s in ("tree", "sand", "soil") for r in (5, 10, 20)}
    assert sum(r["params"]["windows"] for r in rows) == 3 * 45


def test_simulate_is_byte_identical(workdir, tmp_path):
    cfg = workdir / "small.json"
    for name in ("a", "b"):
        assert main(["simulate", "--task", "pq", "--out", str(tmp_path / name), "--config", str(cfg),
                     "--seed", "4"]) == 0
    for p in (tmp_path / "a").rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()
    for p in (tmp_path / "a" / "pq").iterdir():
        assert p.read_bytes() == (workdir / "corpus" / "pq" / p.name).read_bytes()


def test_loaders_shapes(workdir):
    root = workdir / "corpus"
    x, y = corpus.load_hif_dataset(root)
    assert x.shape == (135, 8, 6) and np.bincount(y).tolist() == [45, 45, 45]
    f, lab = corpus.load_loadid_dataset(root)
    assert f.shape[0] == lab.shape[0] == 12 * len(simgen.APPLIANCES) and np.all(np.isfinite(f))
    windows, scale, agg, truth = corpus.load_disagg_dataset(root, "kettle", 64)
    assert len(windows) >= 200 and scale > 0
    assert len(agg) == len(truth) == int(0.5 * 14400)


# --- detect-pq and identify-load --------------------------------------------------------------

def test_detect_pq_swell(capsys, workdir):
    code, events, _ = run(capsys, "detect-pq", "--input", workdir / "corpus" / "pq" / "swell.json")
    assert code == 0
    assert [e["kind"] for e in events] == ["swell"]
    assert events[0]["timestamp_s"] == pytest.approx(0.5, abs=0.011)
    assert events[0]["extremum"] == pytest.approx(1.25, abs=0.01)


def test_detect_pq_clean_is_silent(capsys, workdir):
    code, events, _ = run(capsys, "detect-pq", "--input", workdir / "corpus" / "pq" / "clean.json")
    assert code == 0 and events == []


def test_text_format(capsys, workdir):
    assert main(["detect-pq", "--format", "text", "--input", str(workdir / "corpus" / "pq" / "dip.json")]) == 0
    assert "kind: dip" in capsys.readouterr().out


# --- training and evaluation ---------------------------------------------------------------

def test_eval_flags_untrained_model(capsys, workdir):
    net = build_hif_cnn(3, seed=1)
    for layer in net.layers:
        for v in layer.params.values():
            v[...] = 0.0
    write_json(workdir / "blank.model.json", to_document(net))
    code, (rep,), _ = run(capsys, "eval", "--task", "hif3", "--corpus", workdir / "corpus",
                          "--model", workdir / "blank.model.json", "--config", workdir / "small.json")
    assert code == 0 and rep["near_chance"]
    # constant logits put every sample in class 0, and the classes are balanced
    assert rep["accuracy_pct"] == pytest.approx(100.0 * np.trace(rep["confusion"]) / rep["samples"], abs=1e-4)
    assert np.count_nonzero(np.array(rep["confusion"])[:, 1:]) == 0


def test_train_then_eval_reproduces_report(capsys, workdir):
    args = ["--task", "hif2", "--corpus", workdir / "corpus", "--config", workdir / "small.json"]
    code, (trained,), _ = run(capsys, "train", *args, "--out", workdir / "models")
    assert code == 0 and (workdir / "models" / "hif2.report.json").exists()
    code, (evaluated,), _ = run(capsys, "eval", *args, "--model", workdir / "models" / "hif2.model.json")
    assert code == 0
    for key in ("accuracy_pct", "confusion", "binary", "samples"):
        assert evaluated[key] == trained[key]
    code, _, err = run(capsys, "eval", "--task", "loadid", "--corpus", workdir / "corpus",
                       "--model", workdir / "models" / "hif2.model.json")
    assert code == 2 and "does not match" in err


def test_detect_hif_batch_and_stream_agree(capsys, workdir):
    model = workdir / "models" / "hif2.model.json"
    if not model.exists():
        pytest.skip("depends on the training test")
    src = workdir / "corpus" / "hif" / "stream_fault.json"
    code, batch, _ = run(capsys, "detect-hif", "--model", model, "--input", src)
    assert code == 0 and len(batch) == (20000 - 1792) // 1536 + 1
    env = workdir / "batch.json"
    write_json(env, {"pipeline": {"realtime": False}})
    code, streamed, _ = run(capsys, "detect-hif", "--model", model, "--input", src, "--stream", "--config", env)
    assert code == 0
    stats = streamed.pop()["stats"]
    assert streamed == batch
    assert "timing" in stats and stats["results"] == len(batch)
    assert not any(k.startswith("latency") for k in stats)


def test_identify_load_example(capsys, workdir):
    code, (rep,), _ = run(capsys, "train", "--task", "loadid", "--corpus", workdir / "corpus",
                          "--out", workdir / "models", "--config", workdir / "small.json")
    assert code == 0
    ex = workdir / "corpus" / "loadid"
    code, events, _ = run(capsys, "identify-load", "--model", workdir / "models" / "loadid.model.json",
                          "--input", ex / "example_current.json", "--voltage", ex / "example_voltage.json")
    assert code == 0 and len(events) >= 1
    labelled = [e for e in events if "label" in e]
    assert labelled and all(0.0 <= e["probability"] <= 1.0 for e in labelled)
    code, _, _ = run(capsys, "identify-load", "--model", workdir / "models" / "loadid.model.json",
                     "--input", ex / "example_current.json", "--voltage", workdir / "corpus" / "hif" / "stream_fault.json")
    assert code == 2                     # same length, different sample rate


def test_disaggregate_scores_match_recomputation(capsys, workdir):
    root = workdir / "corpus"
    code, (rep,), _ = run(capsys, "train", "--task", "disagg:kettle", "--corpus", root,
                          "--out", workdir / "models", "--config", workdir / "small.json")
    assert code == 0 and (workdir / "models" / "disagg_kettle.model.json").exists()
    code, (out,), _ = run(capsys, "disaggregate", "--model-dir", workdir / "models", "--appliance", "kettle",
                          "--series", root / "disagg" / "test_house_aggregate.txt",
                          "--truth", root / "disagg" / "test_house_kettle.txt", "--out", workdir / "est")
    assert code == 0
    _, truth, _ = read_power_series(root / "disagg" / "test_house_kettle.txt")
    _, est, _ = read_power_series(workdir / "est" / "estimate_kettle.txt")
    assert out["mae_w"] == pytest.approx(mae(truth, est), abs=1e-3)
    assert out["sae"] == pytest.approx(sae(truth, est), abs=1e-3)
    assert out["mae_w"] == pytest.approx(rep["mae_w"], abs=1e-3)
    code, _, _ = run(capsys, "disaggregate", "--model-dir", workdir / "models", "--appliance", "fridge",
                     "--series", root / "disagg" / "test_house_aggregate.txt")
    assert code == 2


# --- bench -------------------------------------------------------------------------------------

def test_bench_strict_passes(capsys, workdir):
    code, (rep,), _ = run(capsys, "bench", "--strict", "--config", workdir / "small.json")
    assert code == 0 and rep["passed"]
    assert rep["processor_budget_pct"] == pytest.approx(55.86, abs=0.01)
    assert rep["expected_results_per_s"] == pytest.approx(13.0208, abs=1e-4)
    assert "timing" in rep


def test_bench_strict_failure_exits_3(capsys, tmp_path):
    write_json(tmp_path / "tight.json", {"pipeline": {"duration_s": 1.0, "latency_budget_ms": 1.0}})
    code, (rep,), _ = run(capsys, "bench", "--strict", "--config", tmp_path / "tight.json")
    assert code == 3 and not rep["checks"]["latency_within_budget"]


def test_env_override_reaches_commands(monkeypatch):
    monkeypatch.setenv("GRIDSENSE_HIF_EPOCHS", "7")
    assert load_config()["hif"]["epochs"] == 7
    monkeypatch.setenv("GRIDSENSE_HIF_EPOCHS", "seven")
    assert main(["detect-pq", "--input", "x"]) == 1


def test_parser_lists_commands():
    text = build_parser().format_help()
    for cmd in ("simulate", "train", "eval", "detect-hif", "detect-pq", "identify-load", "disaggregate", "bench"):
        assert cmd in text
