import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dmlct.wavelet import (DecompositionDepthError, WaveletBands, WaveletError, decompose, get_filter_bank,
                           high_freq, low_freq, max_level, recompose, split_bands)

pywt = pytest.importorskip("pywt")


def _ref_wavedec2(x, level, name="db3"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return pywt.wavedec2(x, name, mode="symmetric", level=level)


def _ref_waverec2(coeffs, name="db3"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return pywt.waverec2(coeffs, name, mode="symmetric")


def _rel_err(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


@pytest.mark.parametrize("name", ["haar", "db1", "db2", "db3", "db4", "db6", "db10"])
def test_filters_match_reference(name):
    fb = get_filter_bank(name)
    w = pywt.Wavelet(name)
    for mine, ref in ((fb.dec_lo, w.dec_lo), (fb.dec_hi, w.dec_hi), (fb.rec_lo, w.rec_lo), (fb.rec_hi, w.rec_hi)):
        np.testing.assert_allclose(mine, ref, atol=1e-12)


def test_unknown_filter():
    with pytest.raises(WaveletError):
        decompose(np.zeros((32, 32)), 1, "sym99")


def test_constant_image_has_no_detail():
    bands = decompose(np.full((32, 32), 50.0), 1, "db3")
    for band in bands.details[0]:
        assert np.abs(band).max() < 1e-9
    assert np.abs(bands.approx).max() > 50


def test_random_128_level6_round_trip():
    x = np.random.default_rng(0).normal(size=(128, 128))
    bands = decompose(x, 6, "db3")
    assert len(bands.details) == 6
    assert _rel_err(recompose(bands), x) < 1e-6


def test_impulse_bands_match_reference():
    x = np.zeros((64, 64))
    x[20, 37] = 1000.0
    bands = decompose(x, 5, "db3")
    ref = _ref_wavedec2(x, 5)
    np.testing.assert_allclose(bands.approx, ref[0], atol=1e-6)
    for mine, theirs in zip(bands.details, ref[1:]):
        for a, b in zip(mine, theirs):
            np.testing.assert_allclose(a, b, atol=1e-6)


@pytest.mark.parametrize("shape,level", [((11, 7), 1), ((37, 53), 3), ((65, 64), 4), ((512, 512), 6)])
def test_odd_and_large_shapes_round_trip(shape, level):
    x = np.random.default_rng(1).normal(size=shape)
    bands = decompose(x, level)
    out = recompose(bands)
    assert out.shape == shape
    assert _rel_err(out, x) < 1e-6
    ref = _ref_wavedec2(x, level)
    np.testing.assert_allclose(bands.approx, ref[0], atol=1e-9)


def test_recompose_zero_approx_of_constant():
    bands = decompose(np.full((64, 64), 40.0), 3)
    bands.approx[:] = 0
    assert np.abs(recompose(bands)).max() < 1e-9


def test_single_detail_coefficient_synthesis_matches_reference():
    x = np.zeros((64, 64))
    bands = decompose(x, 3)
    bands.details[1][2][3, 4] = 1.0
    ref = _ref_wavedec2(x, 3)
    ref[2] = tuple(np.array(b) for b in ref[2])
    ref[2][2][3, 4] = 1.0
    np.testing.assert_allclose(recompose(bands), _ref_waverec2(ref)[:64, :64], atol=1e-12)


def test_structural_errors():
    bands = decompose(np.zeros((32, 32)), 2)
    bad = bands.copy()
    bad.details = bad.details[:1]
    with pytest.raises(WaveletError):
        recompose(bad)
    bad = bands.copy()
    bad.approx = np.zeros((3, 3))
    with pytest.raises(WaveletError):
        recompose(bad)


def test_depth_error():
    assert max_level((128, 128), "db3") == 7
    decompose(np.zeros((128, 128)), 7)
    with pytest.raises(DecompositionDepthError, match="decomposition depth"):
        decompose(np.zeros((128, 128)), 8)
    with pytest.raises(WaveletError):
        decompose(np.zeros((16, 16)), 0)


def test_high_freq_constant_is_zero():
    x = np.full((64, 64), 123.0)
    assert np.abs(high_freq(x, 5)).max() < 1e-4 * 123
    np.testing.assert_allclose(low_freq(x, 5), x, atol=1e-6)


def test_step_edge_high_freq_matches_reference_and_is_localised():
    x = np.zeros((128, 128))
    x[:, 64:] = 1000.0
    hf = high_freq(x, 5)
    ref = _ref_wavedec2(x, 5)
    ref[0] = np.zeros_like(ref[0])
    np.testing.assert_allclose(hf, _ref_waverec2(ref)[:128, :128], atol=1e-6)
    energy = np.abs(hf).sum(0)
    assert np.argmax(energy) in (62, 63, 64, 65)
    assert energy[56:72].mean() > 3 * energy[:8].mean()


def test_low_freq_matches_reference():
    x = np.random.default_rng(2).normal(size=(128, 128)) * 100
    lf = low_freq(x, 6)
    ref = _ref_wavedec2(x, 6)
    ref[1:] = [tuple(np.zeros_like(b) for b in triple) for triple in ref[1:]]
    np.testing.assert_allclose(lf, _ref_waverec2(ref)[:128, :128], atol=1e-6)
    np.testing.assert_allclose(x - high_freq(x, 6), lf, atol=1e-6 * np.abs(x).max())


def test_split_bands_matches_separate_calls():
    x = np.random.default_rng(3).normal(size=(48, 40))
    hf, lf = split_bands(x, 3)
    np.testing.assert_allclose(hf, high_freq(x, 3), atol=1e-12)
    np.testing.assert_allclose(lf, low_freq(x, 3), atol=1e-12)


images = arrays(np.float64, st.tuples(st.integers(24, 70), st.integers(24, 70)),
                elements=st.floats(-1000, 3000, allow_nan=False))


@settings(max_examples=40, deadline=None)
@given(images, st.integers(1, 3))
def test_perfect_reconstruction_and_split(x, level):
    scale = max(np.abs(x).max(), 1.0)
    assert np.abs(recompose(decompose(x, level)) - x).max() / scale < 1e-6
    hf, lf = split_bands(x, level)
    assert np.abs(hf + lf - x).max() / scale < 1e-6


@settings(max_examples=30, deadline=None)
@given(images, st.floats(-5, 5), st.floats(-5, 5))
def test_high_freq_linearity(x, a, b):
    y = np.roll(x[::-1], 3, axis=1)
    lhs = high_freq(a * x + b * y, 2)
    rhs = a * high_freq(x, 2) + b * high_freq(y, 2)
    assert np.abs(lhs - rhs).max() <= 1e-6 * max(1.0, np.abs(lhs).max(), np.abs(rhs).max())


@settings(max_examples=30, deadline=None)
@given(images, st.floats(-2000, 2000).filter(lambda c: abs(c) > 1e-3))
def test_dc_rejection(x, c):
    assert np.abs(high_freq(x + c, 3) - high_freq(x, 3)).max() < 1e-4 * abs(c)


def test_bands_dataclass_shapes():
    b = decompose(np.zeros((37, 53)), 3)
    assert isinstance(b, WaveletBands)
    assert b.original_shape == (37, 53)
    assert b.level == 3 and b.filter_name == "db3"
    assert b.details[0][0].shape == b.approx.shape
