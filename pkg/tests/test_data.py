import struct

import numpy as np
import pytest

from dmlct.config import TrainConfig
from dmlct.data import (CtFormatError, CtImage, PhantomSpec, Structure, decode_slice, encode_slice, load_dir,
                        load_slice, make_phantom_pair, prepare_hf_crop, random_crop, read_manifest, save_slice,
                        write_manifest)
from dmlct.wavelet import split_bands


def test_round_trip_within_half_hu(tmp_path):
    px = np.random.default_rng(0).uniform(-1024, 3071, size=(40, 33))
    save_slice(CtImage(px, "a"), tmp_path / "a.cthu")
    back = load_slice(tmp_path / "a.cthu", "hdct")
    assert np.abs(back.pixels - px).max() <= 0.5
    assert back.id == "a" and back.domain_tag == "hdct"


def test_wide_range_round_trip():
    px = np.array([[-1e5, 0.0], [5e4, 1e5]])
    assert np.abs(decode_slice(encode_slice(px)) - px).max() <= 0.5 * 2e5 / 65535 * 1.01


def test_affine_convention():
    buf = struct.pack("<4sHHff", b"CTHU", 1, 2, 1.0, -1024.0) + np.array([0, 1024], "<u2").tobytes()
    np.testing.assert_array_equal(decode_slice(buf), [[-1024.0, 0.0]])


def test_parse_errors():
    good = encode_slice(np.zeros((4, 4)))
    with pytest.raises(CtFormatError) as info:
        decode_slice(good[:-3])
    assert info.value.offset == len(good) - 3
    with pytest.raises(CtFormatError):
        decode_slice(good[:6])
    with pytest.raises(CtFormatError):
        decode_slice(b"DICM" + good[4:])
    with pytest.raises(CtFormatError):
        decode_slice(good + b"\0")


def test_image_validation():
    with pytest.raises(ValueError):
        CtImage(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        CtImage(np.zeros((2, 2)), domain_tag="mri")
    report = CtImage(np.array([[-1200.0, 0.0], [5000.0, 20.0]])).hu_range_report()
    assert report == {"below": 1, "above": 1, "ok": False}


def test_manifest_and_dir(tmp_path):
    for i in (2, 0, 1):
        save_slice(CtImage(np.full((4, 4), float(i))), tmp_path / f"s{i}.cthu")
    imgs = load_dir(tmp_path, "hdct")
    assert [im.id for im in imgs] == ["s0", "s1", "s2"]
    write_manifest(tmp_path / "m.tsv", [("s0.cthu", "ldct"), ("s1.cthu", "hdct")])
    assert read_manifest(tmp_path / "m.tsv") == [("s0.cthu", "ldct"), ("s1.cthu", "hdct")]
    (tmp_path / "bad.tsv").write_text("x\tpet\n")
    with pytest.raises(ValueError):
        read_manifest(tmp_path / "bad.tsv")


def test_noise_free_phantoms():
    sets = make_phantom_pair(PhantomSpec(size=64, noise_sigma_ld=0, noise_sigma_hd=0, shift_jitter_px=2), 2, 2)
    for noisy, clean in zip(sets.ldct + sets.hdct, sets.clean_ld + sets.clean_hd):
        np.testing.assert_array_equal(noisy.pixels, clean.pixels)


def test_noise_sigma_recovered():
    spec = PhantomSpec(size=128, structures=(Structure("disk", (64, 64), (50,), 0.0),), noise_sigma_ld=60,
                       shift_jitter_px=0, scale_jitter=0)
    sets = make_phantom_pair(spec, 2, 1)
    vals = np.concatenate([x.pixels[c.pixels == 0] for x, c in zip(sets.ldct, sets.clean_ld)])
    assert vals.size >= 10_000
    assert abs(vals.std() - 60) <= 0.05 * 60


def test_domain_shift_recovered():
    sets = make_phantom_pair(PhantomSpec(domain_mean_shift=-127, seed=3), 10, 10)
    air_ld = np.concatenate([x.pixels[c.pixels == -1000] for x, c in zip(sets.ldct, sets.clean_ld)])
    air_hd = np.concatenate([x.pixels[c.pixels == -1127] for x, c in zip(sets.hdct, sets.clean_hd)])
    assert abs(air_hd.mean() - air_ld.mean() + 127) <= 2


def test_phantoms_deterministic_and_varied():
    a = make_phantom_pair(PhantomSpec(size=64, seed=5, shift_jitter_px=2), 3, 1)
    b = make_phantom_pair(PhantomSpec(size=64, seed=5, shift_jitter_px=2), 3, 1)
    for x, y in zip(a.ldct, b.ldct):
        np.testing.assert_array_equal(x.pixels, y.pixels)
    assert not np.array_equal(a.clean_ld[0].pixels, a.clean_ld[1].pixels)
    assert a.ldct[0].id == "ld_0000" and a.hdct[0].domain_tag == "hdct"


def test_phantom_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(size=32, structures=(Structure("disk", (2, 2), (10,), 0.0),))
    with pytest.raises(ValueError):
        PhantomSpec(noise_sigma_ld=-1)
    with pytest.raises(ValueError):
        PhantomSpec(structures=(Structure("star", (64, 64), (5,), 0.0),))


def test_random_crop():
    img = np.arange(128 * 128, dtype=float).reshape(128, 128)
    np.testing.assert_array_equal(random_crop(img, 128, np.random.default_rng(0)), img)
    big = np.zeros((512, 512))
    for s in range(20):
        assert random_crop(big, 128, np.random.default_rng(s)).shape == (128, 128)
    a = random_crop(np.random.default_rng(1).normal(size=(300, 300)), 128, np.random.default_rng(9))
    b = random_crop(np.random.default_rng(1).normal(size=(300, 300)), 128, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        random_crop(np.zeros((100, 200)), 128, np.random.default_rng(0))


def test_prepare_hf_crop():
    cfg = TrainConfig(crop=64, wavelet_level=4, hf_scale=3000.0)
    img = make_phantom_pair(PhantomSpec(seed=2), 1, 1).ldct[0]
    hf, lf = prepare_hf_crop(img, cfg, np.random.default_rng(4))
    r, c = np.random.default_rng(4).integers(0, 65, size=2)
    crop = img.pixels[r:r + 64, c:c + 64]
    np.testing.assert_allclose(hf * cfg.hf_scale + lf, crop, atol=1e-5)
    full_hf, _ = split_bands(img.pixels, 4)
    np.testing.assert_allclose(hf * cfg.hf_scale, full_hf[r:r + 64, c:c + 64], atol=1e-9)
    const_hf, _ = prepare_hf_crop(np.full((128, 128), 40.0), cfg, np.random.default_rng(0))
    assert np.abs(const_hf).max() < 1e-6
