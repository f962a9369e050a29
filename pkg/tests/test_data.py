import gzip
import struct

import numpy as np
import pytest

from robeval.data import (
    load_dataset,
    load_tensor,
    mnist_subset,
    read_idx_images,
    read_idx_labels,
    save_tensor,
    tensor_from_bytes,
    tensor_to_bytes,
    validate_labels,
    write_idx,
)
from robeval.errors import FormatError, InputError


def test_idx_round_trip_plain_and_gzip(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(7, 4, 3), dtype=np.uint8)
    labels = rng.integers(0, 10, size=7, dtype=np.uint8)
    for suffix in ("", ".gz"):
        write_idx(tmp_path / f"i{suffix}", imgs)
        write_idx(tmp_path / f"l{suffix}", labels)
        np.testing.assert_array_equal(read_idx_images(tmp_path / f"i{suffix}"), imgs)
        x, y = load_dataset(tmp_path / f"i{suffix}", tmp_path / f"l{suffix}")
        assert x.shape == (7, 12) and x.max() <= 1.0
        np.testing.assert_array_equal(x, imgs.reshape(7, -1) / 255.0)
        np.testing.assert_array_equal(y, labels)
    assert (tmp_path / "i.gz").read_bytes()[:2] == b"\x1f\x8b"


def test_idx_errors_name_the_problem(tmp_path):
    write_idx(tmp_path / "i", np.zeros((3, 2, 2), np.uint8))
    raw = (tmp_path / "i").read_bytes()
    cases = {
        "short": (raw[:3], "too short"),
        "magic": (b"\0\0\x08\x01" + raw[4:], "bad magic"),
        "dims": (raw[:10], "truncated IDX dimension header"),
        "payload": (raw[:-1], "expected 12 bytes, got 11"),
    }
    for name, (blob, message) in cases.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(FormatError, match=message) as info:
            read_idx_images(tmp_path / name)
        assert name in str(info.value)
    (tmp_path / "bad.gz").write_bytes(b"\x1f\x8b" + b"junk")
    with pytest.raises(FormatError, match="gzip"):
        read_idx_labels(tmp_path / "bad.gz")
    with pytest.raises(InputError):
        write_idx(tmp_path / "f", np.zeros(3))


def test_tensor_round_trip_is_bit_exact(tmp_path, rng):
    for a in (rng.normal(size=(3, 4, 5)), np.array(2.5), np.zeros((0, 3)), np.array([np.nextafter(0, 1)])):
        save_tensor(tmp_path / "t.aatn", a)
        back = load_tensor(tmp_path / "t.aatn")
        assert back.shape == a.shape
        assert back.tobytes() == np.asarray(a, "<f8").tobytes()
    blob = tensor_to_bytes(np.arange(3.0))
    assert blob[:6] == b"AATNv1" and struct.unpack("<I", blob[6:10]) == (1,)


def test_tensor_truncation_reports_offset():
    blob = tensor_to_bytes(np.arange(6.0).reshape(2, 3))
    with pytest.raises(FormatError, match="payload length mismatch") as info:
        tensor_from_bytes(blob[:-4])
    assert info.value.offset == 18
    with pytest.raises(FormatError, match="truncated shape header"):
        tensor_from_bytes(blob[:12])
    with pytest.raises(FormatError, match="truncated rank"):
        tensor_from_bytes(blob[:8])
    with pytest.raises(FormatError, match="bad magic"):
        tensor_from_bytes(b"AATNv2" + blob[6:])


def test_raw_tensor_dataset(tmp_path):
    x = np.linspace(0, 1, 12).reshape(4, 3)
    save_tensor(tmp_path / "x", x)
    save_tensor(tmp_path / "y", np.array([0.0, 1, 2, 1]))
    xs, ys = load_dataset(tmp_path / "x", tmp_path / "y", "raw_tensor", num_classes=3)
    np.testing.assert_array_equal(xs, x)
    assert ys.dtype == np.int64
    with pytest.raises(InputError):
        load_dataset(tmp_path / "x", tmp_path / "y", "raw_tensor", num_classes=2)
    save_tensor(tmp_path / "bad", x + 1)
    with pytest.raises(FormatError, match=r"\[0, 1\]"):
        load_dataset(tmp_path / "bad", tmp_path / "y", "raw_tensor")
    save_tensor(tmp_path / "frac", np.array([0.5, 1, 2, 1]))
    with pytest.raises(FormatError, match="integers"):
        load_dataset(tmp_path / "x", tmp_path / "frac", "raw_tensor")
    save_tensor(tmp_path / "short", np.array([0.0, 1]))
    with pytest.raises(FormatError, match="4 inputs but 2 labels"):
        load_dataset(tmp_path / "x", tmp_path / "short", "raw_tensor")
    with pytest.raises(InputError):
        load_dataset(tmp_path / "x", tmp_path / "y", "csv")


def test_validate_labels_message():
    with pytest.raises(InputError, match="label 10 at index 2"):
        validate_labels(np.array([0, 3, 10]), 10)


def test_bundled_subset():
    x, y = mnist_subset()
    assert x.shape == (5000, 784) and set(np.unique(y)) == set(range(10))
    assert np.bincount(y).tolist() == [500] * 10
    assert len(mnist_subset("train")[0]) == 4000 and len(mnist_subset("test")[0]) == 1000
    with pytest.raises(InputError):
        mnist_subset("val")


def test_gzip_detection_is_content_based(tmp_path):
    write_idx(tmp_path / "plain.gz", np.zeros(4, np.uint8), compress=False)
    np.testing.assert_array_equal(read_idx_labels(tmp_path / "plain.gz"), np.zeros(4))
    (tmp_path / "packed").write_bytes(gzip.compress((tmp_path / "plain.gz").read_bytes()))
    np.testing.assert_array_equal(read_idx_labels(tmp_path / "packed"), np.zeros(4))
