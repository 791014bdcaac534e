import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import random_camera
from lfpcfuse import io
from lfpcfuse.errors import FormatError, ValidationError
from lfpcfuse.geometry import SparseGrid

F32 = arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5)),
             elements=st.floats(-1e6, 1e6, width=32))


def test_empty_cloud_round_trip(tmp_path):
    io.save_cloud(tmp_path / "c.lfpc", np.zeros((0, 4)))
    assert io.load_cloud(tmp_path / "c.lfpc").shape == (0, 4)


def test_cloud_round_trip_bitwise(tmp_path, rng):
    cloud = rng.standard_normal((100, 4)).astype(np.float32)
    io.save_cloud(tmp_path / "c.lfpc", cloud)
    back = io.load_cloud(tmp_path / "c.lfpc")
    assert back.tobytes() == cloud.tobytes()


def test_ascii_cloud(tmp_path, rng):
    cloud = rng.standard_normal((10, 4))
    io.save_cloud(tmp_path / "c.txt", cloud)
    np.testing.assert_array_equal(io.load_cloud(tmp_path / "c.txt"), cloud)
    (tmp_path / "bad.xyz").write_text("1 2 3\n")
    with pytest.raises(FormatError, match=r"bad.xyz:1: expected 4 values"):
        io.load_cloud(tmp_path / "bad.xyz")


@settings(max_examples=30, deadline=None)
@given(F32)
def test_feature_map_round_trip(tmp_path_factory, fmap):
    path = tmp_path_factory.mktemp("fm") / "f.lffm"
    io.save_feature_map(path, fmap)
    back = io.load_feature_map(path)
    assert back.dtype == np.float32 and back.tobytes() == fmap.tobytes()


def test_label_map_round_trip(tmp_path, rng):
    y = rng.integers(0, 256, (7, 9)).astype(np.uint8)
    io.save_label_map(tmp_path / "y.lflm", y)
    np.testing.assert_array_equal(io.load_label_map(tmp_path / "y.lflm"), y)
    with pytest.raises(FormatError, match="uint8"):
        io.save_label_map(tmp_path / "z.lflm", np.array([[300]]))


def test_sparse_grid_round_trip(tmp_path, rng):
    mask = rng.uniform(size=(5, 6)) < 0.4
    g = SparseGrid(rng.uniform(1, 9, (5, 6)).astype(np.float32), mask)
    io.save_sparse_grid(tmp_path / "g.lfsg", g)
    back = io.load_sparse_grid(tmp_path / "g.lfsg")
    np.testing.assert_array_equal(back.mask, mask)
    np.testing.assert_array_equal(back.values, g.values)


def test_camera_round_trip_both_encodings(tmp_path, rng):
    cam = random_camera(rng)
    for name in ("c.lfcm", "c.txt"):
        io.save_camera(tmp_path / name, cam)
        back = io.load_camera(tmp_path / name)
        assert back.K.tobytes() == cam.K.tobytes() and back.T.tobytes() == cam.T.tobytes()
        assert (back.H, back.W, back.h, back.w) == (cam.H, cam.W, cam.h, cam.w)
    assert (tmp_path / "c.lfcm").stat().st_size == 244


@pytest.mark.parametrize(
    "name, writer, payload",
    [
        ("f.lffm", io.save_feature_map, np.ones((2, 3, 4), np.float32)),
        ("y.lflm", io.save_label_map, np.ones((3, 4), np.uint8)),
        ("c.lfpc", io.save_cloud, np.ones((5, 4), np.float32)),
    ],
)
def test_truncation_and_trailing_bytes(tmp_path, name, writer, payload):
    loader = {"f.lffm": io.load_feature_map, "y.lflm": io.load_label_map, "c.lfpc": io.load_cloud}[name]
    path = tmp_path / name
    writer(path, payload)
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(FormatError, match=rf"requires {len(data)} bytes, file has {len(data) - 3} \(truncated\)"):
        loader(path)
    path.write_bytes(data + b"\0")
    with pytest.raises(FormatError, match="trailing data"):
        loader(path)
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="bad magic"):
        loader(path)
    path.write_bytes(data[:5])
    with pytest.raises(FormatError, match="header alone"):
        loader(path)


def test_sparse_grid_corruption(tmp_path):
    g = SparseGrid(np.array([[1.0, 0.0]]), np.array([[True, False]]))
    io.save_sparse_grid(tmp_path / "g.lfsg", g)
    data = bytearray((tmp_path / "g.lfsg").read_bytes())
    data[-1] = 7
    (tmp_path / "g.lfsg").write_bytes(bytes(data))
    with pytest.raises(FormatError, match="mask bytes"):
        io.load_sparse_grid(tmp_path / "g.lfsg")


def test_calibration_text_errors():
    with pytest.raises(FormatError, match="K rows need 4 values"):
        io.parse_calibration("K\n1 0 0\n0 1 0\n0 0 1\n")
    with pytest.raises(FormatError, match="missing section"):
        io.parse_calibration("SIZE 10 10 5 5\n")
    good = "K\n1 0 5 0\n0 1 5 0\n0 0 1 0\nT\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\nSIZE 10 10 5 5\n"
    assert io.parse_calibration(good).w == 5
    with pytest.raises(ValidationError, match="H >= h"):
        io.parse_calibration(good.replace("SIZE 10 10 5 5", "SIZE 10 10 50 5"))
