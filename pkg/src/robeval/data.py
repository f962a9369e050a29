"""Dataset files: MNIST IDX and the raw ``AATNv1`` tensor format.

``AATNv1`` layout: the 6-byte magic, a little-endian u32 rank, one u32 per
dimension, then the float64 little-endian payload in row-major order.
IDX files may be gzip-compressed; compression is detected from the content.
"""
import gzip
import struct
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

TENSOR_MAGIC = b"AATNv1"
IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801

MNIST_SUBSET_FILES = ("mnist5k-images-idx3-ubyte.gz", "mnist5k-labels-idx1-ubyte.gz")


def _read(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"corrupt gzip stream: {exc}", 0, path) from None
    return raw


def parse_idx(buf, expected_magic, path=None):
    """Parse an unsigned-byte IDX buffer into an integer array."""
    if len(buf) < 4:
        raise FormatError("file too short for an IDX header", len(buf), path)
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise FormatError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0, path)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError("truncated IDX dimension header", len(buf), path)
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    expected = int(np.prod(dims))
    actual = len(buf) - header
    if actual != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, got {actual}", header, path
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path):
    return parse_idx(_read(path), IDX_IMAGES, path)


def read_idx_labels(path):
    return parse_idx(_read(path), IDX_LABELS, path)


def write_idx(path, array, compress=None):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise InputError("IDX writer only supports uint8 arrays")
    magic = 0x0800 | array.ndim
    buf = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    if compress is None:
        compress = str(path).endswith(".gz")
    Path(path).write_bytes(gzip.compress(buf, mtime=0) if compress else buf)


def tensor_to_bytes(array):
    array = np.asarray(array, dtype="<f8")
    head = TENSOR_MAGIC + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return head + array.tobytes()


def tensor_from_bytes(buf, path=None):
    if buf[:6] != TENSOR_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:6])!r}, expected {TENSOR_MAGIC!r}", 0, path)
    if len(buf) < 10:
        raise FormatError("truncated rank field", len(buf), path)
    (ndim,) = struct.unpack("<I", buf[6:10])
    header = 10 + 4 * ndim
    if len(buf) < header:
        raise FormatError("truncated shape header", len(buf), path)
    dims = struct.unpack(f"<{ndim}I", buf[10:header])
    expected = 8 * int(np.prod(dims))
    actual = len(buf) - header
    if actual != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, got {actual}", header, path
        )
    return np.frombuffer(buf, dtype="<f8", offset=header).astype(np.float64).reshape(dims)


def save_tensor(path, array):
    Path(path).write_bytes(tensor_to_bytes(array))


def load_tensor(path):
    return tensor_from_bytes(Path(path).read_bytes(), path)


def load_dataset(images_path, labels_path, fmt="mnist_idx", num_classes=None):
    """Load ``(inputs, labels)``; inputs are flattened to ``(N, d)`` in [0, 1].

    With ``fmt="raw_tensor"`` both files are ``AATNv1`` tensors and the inputs
    are taken as already scaled. Labels are checked against ``num_classes``
    when given.
    """
    if fmt == "mnist_idx":
        images = read_idx_images(images_path)
        labels = read_idx_labels(labels_path).astype(np.int64)
        x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    elif fmt == "raw_tensor":
        x = load_tensor(images_path)
        x = x.reshape(len(x), -1) if x.ndim > 1 else x.reshape(-1, 1)
        raw = load_tensor(labels_path).reshape(-1)
        if np.any(raw != np.round(raw)):
            raise FormatError("labels must be integers", 10, labels_path)
        labels = raw.astype(np.int64)
        if np.any((x < 0) | (x > 1)) or not np.all(np.isfinite(x)):
            raise FormatError("inputs must be finite and lie in [0, 1]", None, images_path)
    else:
        raise InputError(f"unknown dataset format {fmt!r}")
    if len(x) != len(labels):
        raise FormatError(f"{len(x)} inputs but {len(labels)} labels", None, labels_path)
    if num_classes is not None:
        validate_labels(labels, num_classes)
    return x, labels


def validate_labels(labels, num_classes):
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        raise InputError(f"label {labels[bad[0]]} at index {bad[0]} outside [0, {num_classes})")


def mnist_subset_paths():
    """Paths of the bundled 5000-image MNIST subset (500 per class, shuffled)."""
    base = resources.files("robeval") / "data"
    return tuple(Path(str(base / name)) for name in MNIST_SUBSET_FILES)


def mnist_subset(split="all"):
    """Bundled MNIST digits as ``(x, y)``: ``"train"`` is the first 4000, ``"test"`` the last 1000."""
    x, y = load_dataset(*mnist_subset_paths())
    if split == "train":
        return x[:4000], y[:4000]
    if split == "test":
        return x[4000:], y[4000:]
    if split == "all":
        return x, y
    raise InputError(f"unknown split {split!r}")
