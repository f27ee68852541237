import json

import numpy as np
import pytest

from usreg_sim.imgvol import Image2, Volume3, load_volume, save_pbm, save_pgm, save_volume


def test_vol_round_trip_u8(tmp_path):
    rng = np.random.default_rng(0)
    data = (rng.random((5, 6, 7)) < 0.3).astype(np.uint8)
    axes = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, -1.0]])
    vol = Volume3(data, (0.5, 1.0, 2.0), (3.0, -1.0, 10.0), axes)
    path = save_volume(vol, tmp_path / "mask.vol")
    back = load_volume(path)
    np.testing.assert_array_equal(back.data, data)
    assert back.data.dtype == np.uint8
    np.testing.assert_allclose(back.spacing, vol.spacing)
    np.testing.assert_allclose(back.origin, vol.origin)
    np.testing.assert_allclose(back.axes, vol.axes)


def test_vol_round_trip_f32(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.random((4, 4, 4)).astype(np.float32)
    vol = Volume3(data, (1, 1, 1), (0, 0, 0), np.eye(3))
    back = load_volume(save_volume(vol, tmp_path / "img.vol"))
    np.testing.assert_array_equal(back.data, data)
    assert back.data.dtype == np.dtype("<f4")


def test_vol_header_is_json_with_expected_fields(tmp_path):
    vol = Volume3(np.zeros((2, 3, 4), dtype=np.uint8), (1, 1, 1), (0, 0, 0), np.eye(3))
    path = save_volume(vol, tmp_path / "v.vol")
    header = json.loads(path.read_text())
    assert header["shape"] == [2, 3, 4]
    assert header["dtype"] == "u8"
    assert (tmp_path / header["data_file"]).exists()
    payload = (tmp_path / header["data_file"]).read_bytes()
    assert len(payload) == 2 * 3 * 4


def test_vol_payload_size_mismatch(tmp_path):
    vol = Volume3(np.zeros((2, 2, 2), dtype=np.uint8), (1, 1, 1), (0, 0, 0), np.eye(3))
    path = save_volume(vol, tmp_path / "v.vol")
    header = json.loads(path.read_text())
    (tmp_path / header["data_file"]).write_bytes(b"\x00" * 3)
    with pytest.raises(ValueError):
        load_volume(path)


def test_pgm_pbm_export(tmp_path):
    img = Image2(np.linspace(0, 1, 12, dtype=np.float32).reshape(3, 4), (1.0, 1.0))
    p = save_pgm(img, tmp_path / "f.pgm")
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n")
    assert len(raw) == len(b"P5\n4 3\n255\n") + 12

    mask = Image2(np.array([[1, 0, 1, 1], [0, 0, 0, 1]], dtype=np.uint8), (1.0, 1.0))
    p = save_pbm(mask, tmp_path / "m.pbm")
    raw = p.read_bytes()
    assert raw.startswith(b"P4\n4 2\n")
    body = raw[len(b"P4\n4 2\n"):]
    assert body == bytes([0b10110000, 0b00010000])
