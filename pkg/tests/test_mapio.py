"""Map persistence: exact .npy roundtrip, quantized PNG roundtrip, timings."""

import numpy as np
import pytest

from selokit import mapio
from selokit.pipeline import ProbabilityMap, StageTimings


def test_npy_roundtrip_exact(tmp_path, rng):
    v = rng.random((33, 47)).astype(np.float32)
    pmap = ProbabilityMap.from_array(v)
    npy, png = mapio.save_map(pmap, tmp_path / "case")
    assert npy.name == "case.npy" and png.name == "case.png"
    back = mapio.load_map_array(npy)
    assert np.array_equal(back.values, v)
    assert back.values.dtype == np.float32


def test_png_roundtrip_within_quantization(tmp_path, rng):
    v = rng.random((20, 20)).astype(np.float32)
    _, png = mapio.save_map(ProbabilityMap.from_array(v), tmp_path / "m")
    back = mapio.load_map_png(png)
    assert back.values.shape == v.shape
    assert np.abs(back.values - v).max() <= 0.5 / mapio.PNG_SCALE + 1e-7


def test_png_extremes_exact(tmp_path):
    v = np.array([[0.0, 1.0]], np.float32)
    _, png = mapio.save_map(ProbabilityMap.from_array(v), tmp_path / "m")
    back = mapio.load_map_png(png)
    assert back.values[0, 0] == 0.0
    assert back.values[0, 1] == 1.0


def test_values_above_one_rejected(tmp_path):
    v = np.full((4, 4), 1.5, np.float32)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        mapio.save_map(ProbabilityMap.from_array(v), tmp_path / "m")


def test_save_is_deterministic(tmp_path, rng):
    v = rng.random((16, 16)).astype(np.float32)
    pmap = ProbabilityMap.from_array(v)
    n1, p1 = mapio.save_map(pmap, tmp_path / "a")
    n2, p2 = mapio.save_map(pmap, tmp_path / "b")
    assert n1.read_bytes() == n2.read_bytes()
    assert p1.read_bytes() == p2.read_bytes()


def test_timings_roundtrip(tmp_path):
    t = StageTimings(cut_s=0.1, sim_s=2.5, gnt_s=0.7, flt_s=0.3, total_s=3.7)
    path = tmp_path / "t.json"
    mapio.save_timings(t, path)
    assert mapio.load_timings(path) == t
    data = path.read_text()
    for key in ("cut_s", "sim_s", "gnt_s", "flt_s", "total_s"):
        assert key in data
