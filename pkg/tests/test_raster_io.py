"""PNM round-trips, disparity byte conventions, and dataset discovery."""

from __future__ import annotations

import numpy as np
import pytest

from treestereo.errors import ConfigError, DataError
from treestereo.raster_io import (
    DisparityMap,
    RasterImage,
    StereoPair,
    find_dataset_scenes,
    load_ground_truth,
    load_image,
    read_pnm,
    save_disparity_pgm,
    save_error_overlay,
    write_pnm,
)


def test_p6_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    image = RasterImage(rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8))
    path = tmp_path / "img.ppm"
    write_pnm(path, image)
    back = read_pnm(path)
    assert back.data.shape == (7, 5, 3)
    np.testing.assert_array_equal(back.data, image.data)


def test_p5_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    image = RasterImage(rng.integers(0, 256, size=(4, 9, 1), dtype=np.uint8))
    path = tmp_path / "img.pgm"
    write_pnm(path, image)
    back = read_pnm(path)
    assert back.channels == 1
    np.testing.assert_array_equal(back.data, image.data)


def test_read_pnm_skips_comments(tmp_path):
    path = tmp_path / "c.pgm"
    body = bytes([10, 20, 30, 40, 50, 60])
    path.write_bytes(b"P5\n# a comment\n3 # trailing\n2\n255\n" + body)
    image = read_pnm(path)
    assert image.data.shape == (2, 3, 1)
    assert image.data[1, 2, 0] == 60


def test_read_pnm_rejects_wide_maxval(tmp_path):
    path = tmp_path / "wide.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(DataError):
        read_pnm(path)


def test_read_pnm_rejects_truncated_body(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
    with pytest.raises(DataError):
        read_pnm(path)


def test_load_image_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_image(tmp_path / "absent.pgm")


def test_ground_truth_zero_is_invalid(tmp_path):
    stored = np.array([[0, 8, 16], [24, 0, 8]], dtype=np.uint8)
    path = tmp_path / "disp.pgm"
    write_pnm(path, RasterImage(stored[:, :, None]))
    gt = load_ground_truth(path, scale=8)
    np.testing.assert_array_equal(gt.valid, stored != 0)
    np.testing.assert_array_equal(gt.values, (stored // 8) * gt.valid)
    assert gt.scale == 8


def test_ground_truth_clamps_above_dmax(tmp_path, caplog):
    stored = np.array([[8, 240]], dtype=np.uint8)
    path = tmp_path / "disp.pgm"
    write_pnm(path, RasterImage(stored[:, :, None]))
    with caplog.at_level("WARNING"):
        gt = load_ground_truth(path, scale=8, d_max=16)
    assert gt.valid.tolist() == [[True, False]]
    assert "marked invalid" in caplog.text


def test_ground_truth_keep_zero_when_not_invalid(tmp_path):
    stored = np.zeros((2, 2), dtype=np.uint8)
    path = tmp_path / "disp.pgm"
    write_pnm(path, RasterImage(stored[:, :, None]))
    gt = load_ground_truth(path, scale=1, zero_invalid=False)
    assert gt.valid.all()


def test_disparity_round_trip(tmp_path):
    values = np.array([[0, 3], [7, 12]], dtype=np.int32)
    valid = np.array([[False, True], [True, True]])
    disp = DisparityMap(values=values * valid, valid=valid, scale=16)
    path = tmp_path / "out.pgm"
    save_disparity_pgm(path, disp)
    back = load_ground_truth(path, scale=16)
    np.testing.assert_array_equal(back.values, values * valid)
    np.testing.assert_array_equal(back.valid, valid)


def test_disparity_save_rejects_overflow(tmp_path):
    disp = DisparityMap(
        values=np.full((1, 1), 26, dtype=np.int32),
        valid=np.ones((1, 1), dtype=bool),
        scale=10,
    )
    with pytest.raises(DataError):
        save_disparity_pgm(tmp_path / "x.pgm", disp)


def test_error_overlay_colors(tmp_path):
    pred = DisparityMap(
        values=np.array([[5, 9]], dtype=np.int32), valid=np.ones((1, 2), dtype=bool)
    )
    gt = DisparityMap(
        values=np.array([[5, 5]], dtype=np.int32), valid=np.ones((1, 2), dtype=bool)
    )
    path = tmp_path / "err.ppm"
    save_error_overlay(path, pred, gt, occlusion=None, threshold=1)
    image = read_pnm(path)
    assert image.data[0, 0].tolist() == [0, 0, 0]
    assert image.data[0, 1, 0] > 128  # red channel flags the miss


def test_stereo_pair_shape_mismatch():
    a = RasterImage(np.zeros((4, 4, 3), dtype=np.uint8))
    b = RasterImage(np.zeros((4, 5, 3), dtype=np.uint8))
    with pytest.raises(DataError):
        StereoPair(left=a, right=b, d_max=4, name="bad")


def test_find_dataset_scenes(dataset_dir):
    scenes = find_dataset_scenes(dataset_dir)
    assert [s.name for s in scenes] == ["scene0", "scene1"]
    assert all(s.disp1 is not None for s in scenes)
    with pytest.raises(DataError):
        find_dataset_scenes(dataset_dir / "nope")
