"""
IDX Loader

Reads the MNIST distribution format (also used by Fashion-MNIST):

    [offset] [type]          [value]
    0000     32 bit integer  0x00000803  magic (3-dim unsigned byte tensor)
    0004     32 bit integer  n           number of images
    0008     32 bit integer  28          rows
    0012     32 bit integer  28          columns
    0016     unsigned byte   ...         pixels, row-major

Label files use magic 0x00000801 followed by the item count and one byte per
label. All header integers are big-endian. Files ending in `.gz` are read
through gzip.
"""

import gzip
import logging
import struct

import numpy as np

from ..errors import ConsistencyError, IdxFormatError, IdxLengthError
from .datasets import ImageSet

logger = logging.getLogger("angular_cl.idx")

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read_bytes(path: str) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_header(raw: bytes, path: str, expected_magic: int, dims: int) -> tuple[int, ...]:
    header_len = 4 * (1 + dims)
    if len(raw) < header_len:
        raise IdxLengthError(f"{path}: file too short for IDX header ({len(raw)} bytes)")
    magic, *shape = struct.unpack(">" + "I" * (1 + dims), raw[:header_len])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: magic 0x{magic:08x} does not match expected 0x{expected_magic:08x}"
        )
    return tuple(shape)


def read_idx_images(path: str) -> np.ndarray:
    """Return the raw uint8 pixel tensor, shape (n, rows, cols)."""
    raw = _read_bytes(path)
    count, rows, cols = _parse_header(raw, path, IMAGE_MAGIC, 3)
    expected = count * rows * cols
    payload = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if payload.size < expected:
        raise IdxLengthError(f"{path}: payload has {payload.size} bytes, header announces {expected}")
    return payload[:expected].reshape(count, rows, cols)


def read_idx_labels(path: str) -> np.ndarray:
    """Return the raw uint8 label vector."""
    raw = _read_bytes(path)
    (count,) = _parse_header(raw, path, LABEL_MAGIC, 1)
    payload = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if payload.size < count:
        raise IdxLengthError(f"{path}: payload has {payload.size} bytes, header announces {count}")
    return payload[:count]


def load_idx(images_path: str, labels_path: str) -> ImageSet:
    """Load an image/label IDX pair as an ImageSet with intensities byte/255."""
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if pixels.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"Image count {pixels.shape[0]} ({images_path}) does not match "
            f"label count {labels.shape[0]} ({labels_path})"
        )
    images = pixels.reshape(pixels.shape[0], -1).astype(np.float32) / np.float32(255.0)
    logger.debug("Loaded %d images of %d pixels from %s", images.shape[0], images.shape[1], images_path)
    return ImageSet(images, labels.astype(np.int64))
