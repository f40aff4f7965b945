import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridsense.detectors import (HIF3_LABELS, ConfusionMatrix, argmax_one_hot, build_hif_cnn, build_load_mlp,
                                 classify_hif, classify_hif_batch, confusion_table, evaluate,
                                 evaluate_multiclass, identify_load)
from gridsense.errors import DataError, ParameterError, ShapeError
from gridsense.hif_features import FeatureMap


def shape_walk_count(layers, shape):
    """Independent parameter count: walk (C, H, W) through the declared layer list."""
    total = 0
    for kind, arg in layers:
        if kind == "conv":
            f, k = arg
            c, h, w = shape
            total += f * c * k * k + f
            shape = (f, h - k + 1, w - k + 1)
        elif kind == "bn":
            total += 2 * shape[0]
        elif kind == "pool":
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "dense":
            total += arg * shape[0] + arg
            shape = (arg,)
    return total, shape


def test_hif_cnn_parameter_count():
    spec = [("conv", (4, 2)), ("bn", None), ("pool", None), ("conv", (6, 2)), ("bn", None), ("flatten", None)]
    for classes in (2, 3):
        count, flat = shape_walk_count(spec + [("dense", classes)], (1, 8, 6))
        net = build_hif_cnn(classes)
        assert net.param_count() == count
    assert shape_walk_count(spec, (1, 8, 6))[1] == (12,)
    assert build_hif_cnn(2).param_count() == 168


def test_hif_cnn_forward_zero_map():
    net = build_hif_cnn(3)
    p = net.forward(np.zeros((1, 1, 8, 6)))
    assert p.shape == (1, 3)
    assert abs(p.sum() - 1.0) <= 1e-12


def test_hif_cnn_rejects_other_class_counts():
    with pytest.raises(ParameterError):
        build_hif_cnn(4)


def test_load_mlp_parameter_count():
    net = build_load_mlp(16, 7)
    assert net.param_count() == 9 * 16 + 16 + 16 * 7 + 7 == 279
    p = net.forward(np.zeros((1, 9)))
    assert abs(p.sum() - 1.0) <= 1e-12 and np.all(p >= 0)
    with pytest.raises(ParameterError):
        build_load_mlp(0)


def test_argmax_one_hot():
    np.testing.assert_array_equal(argmax_one_hot([[0.1, 2.0, -1.0]]), [[0, 1, 0]])
    np.testing.assert_array_equal(argmax_one_hot([[1.0, 1.0, 0.0]]), [[0, 0, 0]])


@given(st.lists(st.integers(-20, 20), min_size=2, max_size=7), st.floats(-50, 50))
def test_argmax_shift_invariance(z, c):
    # integer logits keep distinct values at least 1 apart, so the shift cannot round them together
    z = np.array(z, dtype=float)
    np.testing.assert_array_equal(argmax_one_hot(z), argmax_one_hot(z + c))


def _maps(n, seed=0):
    rng = np.random.default_rng(seed)
    return [FeatureMap(rng.standard_normal((8, 6)), k * 1536, 1792, 20000.0) for k in range(n)]


def test_classify_hif_consistency():
    net = build_hif_cnn(3, seed=1)
    net.meta["trained"] = True
    maps = _maps(6)
    verdicts = classify_hif_batch(maps, net)
    probs = net.forward(np.stack([m.values for m in maps])[:, None])
    for v, p, m in zip(verdicts, probs, maps):
        k = int(np.argmax(p))
        assert v.label == HIF3_LABELS[k]
        assert v.probability == pytest.approx(p[k], abs=1e-15)
        assert v.feature_map_span == m.span
        assert v.warning is None
    assert classify_hif(maps[0], net) == classify_hif(maps[0], net)


def test_untrained_model_warns():
    v = classify_hif(_maps(1)[0], build_hif_cnn(2))
    assert v.warning == "untrained model"
    rec = v.as_record(20000.0)
    assert rec["warning"] == "untrained model"
    assert rec["timestamp_s"] == 0.0


def test_identify_load_standardises():
    net = build_load_mlp(4, 3, seed=2)
    net.meta["feature_mean"] = [1.0] * 9
    net.meta["feature_std"] = [2.0] * 9
    x = np.arange(9.0)
    np.testing.assert_array_equal(identify_load(x, net), net.forward(((x - 1.0) / 2.0)[None]))
    with pytest.raises(ShapeError):
        identify_load(np.zeros(8), net)


# --- metrics -------------------------------------------------------------------------

def test_metrics_reference_case():
    r = evaluate(ConfusionMatrix(TP=8, TN=9, FP=1, FN=2))
    assert r.accuracy == pytest.approx(85.0, abs=0.01)
    assert r.dependability == pytest.approx(88.89, abs=0.01)
    assert r.security == pytest.approx(81.82, abs=0.01)
    assert r.safety == pytest.approx(81.82, abs=0.01)
    assert r.sensibility == pytest.approx(80.0, abs=0.01)
    assert "security" in r.note


def test_metrics_perfect_and_empty():
    r = evaluate(ConfusionMatrix(10, 10, 0, 0))
    assert (r.accuracy, r.dependability, r.security, r.safety, r.sensibility) == (100.0,) * 5
    with pytest.raises(DataError):
        evaluate(ConfusionMatrix(0, 0, 0, 0))
    with pytest.raises(DataError):
        ConfusionMatrix(-1, 0, 0, 0)


def test_zero_denominator_is_undefined():
    r = evaluate(ConfusionMatrix(0, 5, 0, 0))
    assert r.dependability is None and r.sensibility is None
    assert r.as_record()["dependability_pct"] is None


counts = st.integers(0, 50)


@given(counts, counts, counts, counts, st.integers(1, 9))
def test_metrics_scale_invariant(tp, tn, fp, fn, k):
    if tp + tn + fp + fn == 0:
        return
    a = evaluate(ConfusionMatrix(tp, tn, fp, fn)).as_record()
    b = evaluate(ConfusionMatrix(k * tp, k * tn, k * fp, k * fn)).as_record()
    for key in a:
        if isinstance(a[key], float):
            assert b[key] == pytest.approx(a[key], abs=1e-9)
        else:
            assert a[key] == b[key]


@given(st.integers(1, 50), st.integers(1, 50), counts, counts)
def test_accuracy_is_weighted_combination(tp, tn, fp, fn):
    # A = (P * SN + N' * specificity) / total, with P = TP + FN and N' = TN + FP
    r = evaluate(ConfusionMatrix(tp, tn, fp, fn))
    total = tp + tn + fp + fn
    spec = 100.0 * tn / (tn + fp)
    assert r.accuracy == pytest.approx(((tp + fn) * r.sensibility + (tn + fp) * spec) / total, abs=1e-9)


def test_from_labels():
    cm = ConfusionMatrix.from_labels([0, 0, 1, 1, 0], [0, 1, 1, 0, 0], positive=0)
    assert (cm.TP, cm.TN, cm.FP, cm.FN) == (2, 1, 1, 1)


def test_multiclass_tables():
    np.testing.assert_array_equal(evaluate_multiclass(np.eye(3)), 100 * np.eye(3))
    row = evaluate_multiclass([[197, 2, 1], [0, 1, 0], [0, 0, 1]])[0]
    np.testing.assert_allclose(row, [98.5, 1.0, 0.5], atol=1e-12)
    t = confusion_table([0, 1, 2, 2], [0, 2, 2, 2], 3)
    np.testing.assert_array_equal(t, [[1, 0, 0], [0, 0, 1], [0, 0, 2]])
    with pytest.raises(ShapeError):
        evaluate_multiclass([[1]])
    with pytest.raises(DataError):
        evaluate_multiclass([[1, 0], [0, 0]])
