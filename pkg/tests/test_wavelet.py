import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridsense import simgen
from gridsense.errors import DepthError, LengthError, StructureError
from gridsense.signal import Frame, SampleStream
from gridsense.wavelet import (DB9_LOWPASS, WaveletFilterPair, WaveletTree, coefficient_entropy, db9, dwt_decompose,
                               dwt_reconstruct, gray_to_band, haar, highband_extract, leaf_band_edges, merge,
                               split, wp_entropy, wpt_decompose, wpt_entropy_feature_map, wpt_reconstruct)

FS = 20000.0


def _frame(x):
    return Frame(np.asarray(x, dtype=float), FS)


def test_filter_pair_invariants():
    for f in (db9(), haar()):
        lo, hi = np.asarray(f.lowpass), np.asarray(f.highpass)
        assert lo.sum() == pytest.approx(np.sqrt(2.0), abs=1e-8)
        assert np.sum(lo * lo) == pytest.approx(1.0, abs=1e-12)
        k = np.arange(len(lo))
        np.testing.assert_allclose(hi, (-1.0) ** k * lo[::-1], atol=0)
    assert len(DB9_LOWPASS) == 18


def test_db9_orthonormal_shifts():
    lo = np.asarray(DB9_LOWPASS)
    for s in range(1, 9):
        assert abs(np.dot(lo[2 * s:], lo[:-2 * s])) < 1e-12


def test_db9_vanishing_moments():
    hi = np.asarray(db9().highpass)
    k = np.arange(18, dtype=float)
    for p in range(9):
        assert abs(np.sum(hi * k ** p)) < 1e-6 * max(1.0, np.sum(np.abs(hi) * k ** p))


def test_filter_pair_validation():
    with pytest.raises(StructureError):
        WaveletFilterPair((1.0, 0.0), (0.0, 1.0, 0.0), "bad")


def test_split_matches_direct_formula(rng):
    x = rng.standard_normal(64)
    f = db9()
    a, d = split(x, f)
    for n in range(32):
        idx = (2 * n + np.arange(18)) % 64
        assert a[n] == pytest.approx(np.dot(f.lowpass, x[idx]), abs=1e-12)
        assert d[n] == pytest.approx(np.dot(f.highpass, x[idx]), abs=1e-12)
    np.testing.assert_allclose(merge(a, d, f), x, atol=1e-12)


def test_constant_details_vanish():
    tree = dwt_decompose(_frame(np.full(512, 3.7)), db9(), 3)
    for j in (1, 2, 3):
        assert np.max(np.abs(tree.nodes[(j, 1)])) <= 1e-8


def test_haar_impulse_hand_computed():
    x = np.zeros(8)
    x[2] = 1.0
    tree = dwt_decompose(_frame(x), haar(), 1)
    a, d = tree.nodes[(1, 0)], tree.nodes[(1, 1)]
    expect = np.zeros(4)
    expect[1] = 2 ** -0.5
    np.testing.assert_allclose(a, expect, atol=1e-15)
    np.testing.assert_allclose(np.abs(d), expect, atol=1e-15)


def test_depth_error_names_max_level():
    with pytest.raises(DepthError) as err:
        dwt_decompose(_frame(np.zeros(24)), db9(), 5)
    assert err.value.max_level == 3
    with pytest.raises(DepthError):
        wpt_decompose(_frame(np.zeros(16)), db9(), 0)


def test_zero_and_sinusoid_roundtrip():
    z = dwt_reconstruct(dwt_decompose(_frame(np.zeros(256)), db9(), 4))
    assert np.all(z.values == 0)
    t = np.arange(1024) / FS
    s = np.sin(2 * np.pi * 50 * t)
    back = dwt_reconstruct(dwt_decompose(_frame(s), db9(), 4)).values
    assert np.max(np.abs(back - s)) <= 1e-8


@given(st.integers(1, 4), st.sampled_from(["db9", "haar"]), st.integers(0, 2 ** 31))
def test_perfect_reconstruction_property(levels, name, seed):
    f = db9() if name == "db9" else haar()
    x = np.random.default_rng(seed).standard_normal(1024)
    assert np.max(np.abs(dwt_reconstruct(dwt_decompose(_frame(x), f, levels)).values - x)) <= 1e-8
    assert np.max(np.abs(wpt_reconstruct(wpt_decompose(_frame(x), f, levels)).values - x)) <= 1e-8


def test_reconstruct_rejects_inconsistent_tree(rng):
    tree = dwt_decompose(_frame(rng.standard_normal(64)), db9(), 2)
    broken = dict(tree.nodes)
    del broken[(2, 1)]
    bad = WaveletTree(broken, tree.max_level, tree.filters, tree.kind, tree.signal_length, tree.sample_rate_hz)
    with pytest.raises(StructureError):
        dwt_reconstruct(bad)


def test_wpt_structure_and_constant():
    tree = wpt_decompose(_frame(np.full(256, 2.0)), db9(), 3)
    assert len(tree.leaves()) == 8
    for j in (1, 2, 3):
        level = tree.level(j)
        assert len(level) == 2 ** j
        assert all(len(c) == 256 // 2 ** j for c in level.values())
    leaves = tree.leaves()
    assert all(np.max(np.abs(c)) <= 1e-8 for c in leaves[1:])
    assert np.max(np.abs(leaves[0])) > 1.0


@given(st.integers(1, 4), st.integers(0, 2 ** 31))
def test_wpt_energy_partition(levels, seed):
    x = np.random.default_rng(seed).standard_normal(512)
    e = sum(np.sum(c * c) for c in wpt_decompose(_frame(x), db9(), levels).leaves())
    assert e == pytest.approx(np.sum(x * x), rel=1e-6)


def test_gray_band_mapping():
    assert [gray_to_band(m) for m in range(8)] == [0, 1, 3, 2, 7, 6, 4, 5]
    assert sorted(gray_to_band(m) for m in range(16)) == list(range(16))
    assert leaf_band_edges(3, 1, FS) == (1250.0, 2500.0)


def _leaf_share(level, m, n=4096):
    lo, hi = leaf_band_edges(level, m, FS)
    x = np.sin(2 * np.pi * (lo + hi) / 2 * np.arange(n) / FS + 0.3)
    e = np.array([np.sum(c * c) for c in wpt_decompose(_frame(x), db9(), level).leaves()])
    return e / e.sum()


@pytest.mark.parametrize("level", [1, 2])
def test_band_center_tone_lands_in_its_leaf(level):
    for m in range(2 ** level):
        assert _leaf_share(level, m)[m] >= 0.90


def test_level3_tone_dominates_its_leaf():
    # 18 taps leave wide transition bands after three cascaded splits
    for m in range(8):
        share = _leaf_share(3, m)
        assert np.argmax(share) == m
        assert share[m] >= 0.79


def test_entropy_examples(rng):
    assert coefficient_entropy(np.full(32, -0.7)) == pytest.approx(np.log(32), abs=1e-9)
    e = np.zeros(40)
    e[7] = 3.0
    assert coefficient_entropy(e) == 0.0
    assert coefficient_entropy(np.zeros(5)) == 0.0
    w = rng.standard_normal(64)
    total = sum(v * v for v in w)
    oracle = 0.0
    for v in w:
        p = v * v / total
        oracle -= p * np.log(p)
    assert coefficient_entropy(w) == pytest.approx(oracle, abs=1e-12)


@given(st.floats(1e-3, 1e3), st.booleans(), st.integers(0, 2 ** 31))
def test_entropy_scale_invariance(c, neg, seed):
    w = np.random.default_rng(seed).standard_normal(64)
    c = -c if neg else c
    assert coefficient_entropy(c * w) == pytest.approx(coefficient_entropy(w), abs=1e-12)


@given(st.integers(1, 4), st.integers(0, 2 ** 31))
def test_normalized_entropies_sum_to_one(levels, seed):
    x = np.random.default_rng(seed).standard_normal(256)
    feat = wp_entropy(wpt_decompose(_frame(x), db9(), levels))
    for j in range(1, levels + 1):
        assert feat.normalized[j].sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(feat.normalized[j] >= 0)


def test_entropy_degenerate_flags():
    feat = wp_entropy(wpt_decompose(_frame(np.zeros(64)), db9(), 2))
    assert all(feat.degenerate.values())
    assert all(np.all(v == 0) for v in feat.normalized.values())


def _load(seed=0):
    return simgen.gen_load_current(5.0, duration_s=0.1, sample_rate_hz=FS, seed=seed)


def test_wpt_entropy_map_shape_and_stationarity():
    m = wpt_entropy_feature_map(_load())
    assert m.values.shape == (14, 12)
    cols = m.values
    # columns one cycle apart see identical quarter-cycle phases
    d = [np.linalg.norm(cols[:, c] - cols[:, c + 4]) for c in range(8)]
    assert max(d) < 1e-9


def test_wpt_entropy_map_separates_hif():
    clean = [wpt_entropy_feature_map(simgen.gen_load_current(5.0, duration_s=0.1, sample_rate_hz=FS,
                                                            noise_snr_db=50, seed=s)).values for s in range(10)]
    ref = np.mean(clean, axis=0)
    bound = max(np.linalg.norm(c - ref) for c in clean)
    rng = np.random.default_rng(4)
    x, _ = simgen.hif_window("HIF", rng, "tree", 5.0, span=2000)
    hif = wpt_entropy_feature_map(SampleStream(x, FS)).values
    assert np.linalg.norm(hif - ref) > bound


def test_wpt_entropy_map_zero_and_short():
    m = wpt_entropy_feature_map(SampleStream(np.zeros(1200), FS))
    assert m.degenerate.all()
    with pytest.raises(LengthError):
        wpt_entropy_feature_map(SampleStream(np.zeros(1000), FS))


def test_highband_extract_responses():
    fs = 10000.0
    t = np.arange(10000) / fs
    low = SampleStream(np.sin(2 * np.pi * 50 * t), fs)
    hb = highband_extract(low)
    assert len(hb) == 5000 and hb.sample_rate_hz == fs / 2
    assert np.sum(hb.samples ** 2) <= 0.01 * np.sum(low.samples ** 2)
    high = SampleStream(np.sin(2 * np.pi * 4000 * t), fs)
    assert np.sum(highband_extract(high).samples ** 2) >= 0.80 * np.sum(high.samples ** 2)
    assert len(highband_extract(SampleStream(np.zeros(7), fs))) == 4


def test_highband_burst_at_transient():
    ev = simgen.gen_load_event("laptop", seed=2, duration_s=1.0)
    e = highband_extract(ev.current).samples ** 2
    peak = 2 * int(np.argmax(e))
    assert abs(peak - ev.event_index) <= 64
