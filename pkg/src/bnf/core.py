"""Shared image/tensor types and the BNFT binary tensor format.

All in-memory arrays are float64 and channel-planar: a ``Tensor3`` holds an
array of shape ``(channels, height, width)``. On disk, values are stored as
little-endian float32 in the same order.
"""

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"BNFT"
VERSION = 1
HEADER = struct.Struct("<4sB3I")  # 17 bytes
# Largest payload we agree to allocate (values, not bytes).
MAX_VALUES = 1 << 31


class TensorFormatError(ValueError):
    """Base class for malformed BNFT files."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class DimensionOverflowError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class NonFiniteValueError(TensorFormatError):
    pass


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Tensor3:
    """A ``(channels, height, width)`` block of finite reals."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[None]
        if a.ndim != 3:
            raise ValueError(f"expected a 3-d array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NonFiniteValueError("tensor contains NaN or Inf")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Tensor3):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class UnaryField:
    """Per-pixel class probabilities, stored as ``(K, H, W)``.

    Use :meth:`from_softmax` for data that is already a distribution and
    :meth:`from_scores` to normalize nonnegative scores.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise ValueError(f"expected (K, H, W) probabilities, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise NonFiniteValueError("unary field contains NaN or Inf")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("unary probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def from_softmax(cls, probs, atol=1e-5):
        p = np.asarray(probs, dtype=np.float64)
        sums = p.sum(axis=0)
        if not np.allclose(sums, 1.0, rtol=0.0, atol=atol):
            worst = float(np.abs(sums - 1.0).max())
            raise ValueError(f"per-pixel class sums deviate from 1 by up to {worst:.3g}")
        return cls(p)

    @classmethod
    def from_scores(cls, scores):
        """Normalize nonnegative scores; all-zero pixels become uniform."""
        s = np.asarray(scores, dtype=np.float64)
        if s.ndim != 3:
            raise ValueError(f"expected (K, H, W) scores, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise NonFiniteValueError("scores contain NaN or Inf")
        if s.min() < 0.0:
            raise ValueError("scores must be nonnegative")
        total = s.sum(axis=0, keepdims=True)
        k = s.shape[0]
        out = np.where(total > 0, s / np.where(total > 0, total, 1.0), 1.0 / k)
        return cls(np.clip(out, 0.0, 1.0))

    @classmethod
    def from_tensor(cls, t, normalize=True):
        return cls.from_scores(t.data) if normalize else cls.from_softmax(t.data)

    def to_tensor(self):
        return Tensor3(self.probs)

    @property
    def num_classes(self):
        return self.probs.shape[0]

    @property
    def height(self):
        return self.probs.shape[1]

    @property
    def width(self):
        return self.probs.shape[2]

    def argmax(self):
        """Hard labels; ties go to the lowest class index."""
        return LabelMap(np.argmax(self.probs, axis=0), self.num_classes)

    def flat(self):
        """``(n, K)`` matrix with pixels in row-major order."""
        return self.probs.reshape(self.num_classes, -1).T


@dataclass(frozen=True, eq=False)
class BoundaryMap:
    values: np.ndarray
    thinned: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 3 and v.shape[0] == 1:
            v = v[0]
        if v.ndim != 2:
            raise ValueError(f"expected an (H, W) map, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteValueError("boundary map contains NaN or Inf")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("boundary probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def to_tensor(self):
        return Tensor3(self.values[None])

    @classmethod
    def from_tensor(cls, t, thinned=False):
        if t.channels != 1:
            raise ValueError(f"boundary tensors have one channel, got {t.channels}")
        return cls(t.data[0], thinned=thinned)


@dataclass(frozen=True, eq=False)
class LabelMap:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim == 3 and lab.shape[0] == 1:
            lab = lab[0]
        if lab.ndim != 2:
            raise ValueError(f"expected an (H, W) label map, got shape {lab.shape}")
        if lab.dtype.kind == "f":
            if not np.all(lab == np.round(lab)):
                raise ValueError("labels must be integers")
        lab = lab.astype(np.int64)
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "labels", _frozen(lab, np.int64))

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape

    def to_tensor(self):
        return Tensor3(self.labels[None].astype(np.float64))

    @classmethod
    def from_tensor(cls, t, num_classes):
        if t.channels != 1:
            raise ValueError(f"label tensors have one channel, got {t.channels}")
        return cls(t.data[0], num_classes)

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.labels, other.labels)

    __hash__ = None


# --- BNFT serialization ----------------------------------------------------


def tensor_to_bytes(t):
    payload = t.data.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise NonFiniteValueError("tensor values overflow float32")
    return HEADER.pack(MAGIC, VERSION, t.height, t.width, t.channels) + payload.tobytes()


def tensor_from_bytes(buf):
    if len(buf) < HEADER.size or buf[:4] != MAGIC:
        raise BadMagicError("bad magic: not a BNFT tensor file")
    magic, version, h, w, c = HEADER.unpack_from(buf)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported BNFT version {version}")
    count = h * w * c
    if count > MAX_VALUES:
        raise DimensionOverflowError(f"dimension overflow: {h}x{w}x{c} values")
    if count == 0:
        raise DimensionOverflowError(f"zero-sized tensor {h}x{w}x{c}")
    need = HEADER.size + 4 * count
    if len(buf) < need:
        raise TruncatedPayloadError(
            f"truncated payload: header declares {count} values, file holds {(len(buf) - HEADER.size) // 4}"
        )
    if len(buf) > need:
        raise TensorFormatError(f"{len(buf) - need} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=HEADER.size)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValueError("non-finite value in payload")
    return Tensor3(data.astype(np.float64).reshape(c, h, w))


def tensor_write(t, path):
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def tensor_read(path):
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


def export_pgm(m, path):
    """Write a label or boundary map as an 8-bit binary PGM (P5).

    Labels are spread evenly over 0..255; boundary probabilities map
    linearly onto 0..255.
    """
    if isinstance(m, LabelMap):
        scale = 255.0 / (m.num_classes - 1) if m.num_classes > 1 else 0.0
        gray = np.rint(m.labels * scale)
    elif isinstance(m, BoundaryMap):
        gray = np.rint(m.values * 255.0)
    else:
        raise TypeError(f"cannot export {type(m).__name__} as PGM")
    gray = np.clip(gray, 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_pgm(path):
    """Read back a P5 file written by :func:`export_pgm`."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM file")
        w, h = (int(v) for v in fh.readline().split())
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError(f"unsupported maxval {maxval}")
        return np.frombuffer(fh.read(w * h), dtype=np.uint8).reshape(h, w)
