import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import naive_dft
from gridsense.errors import InvalidSizeError, ParameterError
from gridsense.signal import (Frame, SampleStream, Spectrum, fft, fft_array, frame_stream, hann_window, ifft,
                              ifft_array, is_power_of_two, remove_dc, rms)


def test_sample_stream_rejects_bad_rate_and_nonfinite():
    with pytest.raises(ParameterError):
        SampleStream(np.zeros(4), 0.0)
    with pytest.raises(ParameterError):
        SampleStream(np.array([0.0, np.nan]), 10.0)
    with pytest.raises(ParameterError):
        SampleStream(np.zeros(4), 10.0, "power")


def test_sample_stream_is_immutable():
    s = SampleStream(np.arange(4.0), 10.0)
    with pytest.raises(ValueError):
        s.samples[0] = 1.0


def test_hann_small_cases():
    np.testing.assert_allclose(hann_window(4), [0, 0.5, 1, 0.5], atol=1e-15)
    np.testing.assert_allclose(hann_window(2), [0, 1], atol=1e-15)
    with pytest.raises(InvalidSizeError):
        hann_window(1)


def test_hann_512_sum_matches_loop():
    n = 512
    total = 0.0
    for j in range(n):
        total += 0.5 - 0.5 * np.cos(2 * np.pi * j / n)
    w = hann_window(n)
    assert w.sum() == pytest.approx(total, abs=1e-9)
    assert w[0] == 0.0 and np.all((w >= 0) & (w <= 1))


@pytest.mark.parametrize("n,frames", [(1792, 6), (512, 1), (10000, 38), (100, 0)])
def test_frame_counts(n, frames):
    s = SampleStream(np.arange(n, dtype=float), 20000.0)
    out = frame_stream(s, 512, 0.5)
    assert len(out) == frames
    # independent count: hops of 256 that fit
    assert len(out) == len([st for st in range(0, n, 256) if st + 512 <= n])
    for k, f in enumerate(out):
        assert f.start_index == 256 * k
        np.testing.assert_array_equal(f.values, s.samples[256 * k:256 * k + 512])


def test_frame_stream_argument_checks():
    s = SampleStream(np.zeros(10), 1.0)
    with pytest.raises(InvalidSizeError):
        frame_stream(s, 1)
    with pytest.raises(ParameterError):
        frame_stream(s, 4, 1.0)


@given(st.integers(2, 64), st.integers(0, 400))
def test_frame_stream_covers_all_but_remainder(frame_len, n):
    s = SampleStream(np.arange(n, dtype=float), 1.0)
    frames = frame_stream(s, frame_len, 0.5)
    hop = max(1, int(round(frame_len * 0.5, 9)))
    covered = np.zeros(n, dtype=bool)
    for f in frames:
        covered[f.start_index:f.start_index + frame_len] = True
    if frames:
        last = frames[-1].start_index + frame_len
        assert covered[:last].all()
        assert n - last < hop + frame_len
    else:
        assert n < frame_len


def test_fft_impulse_and_cosine():
    x = np.zeros(16)
    x[0] = 1.0
    np.testing.assert_allclose(fft(Frame(x, 16.0)).bins, np.ones(16), atol=1e-15)
    n, k = 64, 5
    c = np.cos(2 * np.pi * k * np.arange(n) / n)
    X = fft(Frame(c, 64.0)).bins
    mask = np.ones(n, dtype=bool)
    mask[[k, n - k]] = False
    assert np.max(np.abs(X[mask])) < 1e-12
    assert abs(X[k]) == pytest.approx(n / 2)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(InvalidSizeError):
        fft(Frame(np.zeros(12), 1.0))
    assert is_power_of_two(1024) and not is_power_of_two(0) and not is_power_of_two(12)


def test_fft_matches_naive_dft_1024(rng):
    x = rng.standard_normal(1024)
    assert np.max(np.abs(fft_array(x) - naive_dft(x))) <= 1e-9


def test_fft_windowed_inverse_recovers_windowed_input(rng):
    x = rng.standard_normal(256)
    w = hann_window(256)
    spec = fft(Frame(x, 1000.0), w)
    assert np.max(np.abs(ifft(spec).real - x * w)) <= 1e-9
    assert spec.resolution_hz == pytest.approx(1000.0 / 256)


@given(st.integers(0, 12), st.integers(0, 2 ** 31))
def test_parseval_and_conjugate_symmetry(p, seed):
    n = 2 ** p
    x = np.random.default_rng(seed).standard_normal(n)
    X = fft_array(x)
    lhs = np.sum(x * x)
    assert np.sum(np.abs(X) ** 2) / n == pytest.approx(lhs, rel=1e-6)
    np.testing.assert_allclose(X[1:], np.conj(X[1:][::-1]), atol=1e-9 * max(1.0, np.abs(X).max()))


@given(st.integers(1, 10), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2 ** 31))
def test_fft_linearity(p, a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal(2 ** p), r.standard_normal(2 ** p)
    np.testing.assert_allclose(fft_array(a * x + b * y), a * fft_array(x) + b * fft_array(y), atol=1e-9)


def test_ifft_roundtrip(rng):
    X = rng.standard_normal(128) + 1j * rng.standard_normal(128)
    np.testing.assert_allclose(fft_array(ifft_array(X)), X, atol=1e-12)
    assert isinstance(fft(Frame(np.ones(8), 8.0)), Spectrum)


def test_rms_cases(rng):
    assert rms(Frame(np.full(10, -3.0), 1.0)) == pytest.approx(3.0)
    t = np.arange(1000) / 1000.0
    assert rms(Frame(2.0 * np.sin(2 * np.pi * 5 * t), 1000.0)) == pytest.approx(2 / np.sqrt(2), abs=1e-6)
    x = rng.standard_normal(333)
    acc = 0.0
    for v in x:
        acc += v * v
    assert rms(Frame(x, 1.0)) == pytest.approx(np.sqrt(acc / len(x)), abs=1e-12)
    with pytest.raises(InvalidSizeError):
        rms(Frame(np.zeros(0), 1.0))


def test_remove_dc(rng):
    np.testing.assert_allclose(remove_dc(Frame(np.full(8, 5.0), 1.0)).values, 0.0, atol=1e-12)
    t = np.arange(200) / 200.0
    s = np.sin(2 * np.pi * 4 * t)
    np.testing.assert_allclose(remove_dc(Frame(s, 200.0)).values, s, atol=1e-12)
    out = remove_dc(Frame(s + 3.0, 200.0, start_index=7))
    np.testing.assert_allclose(out.values, (s + 3.0) - np.mean(s + 3.0), atol=1e-12)
    assert abs(out.values.mean()) < 1e-12 and out.start_index == 7
