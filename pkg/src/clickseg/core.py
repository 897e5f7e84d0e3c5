"""Foundational raster types and pixel-domain primitives.

Masks travel through the toolkit as plain numpy arrays: binary object masks
as bool (H, W) arrays, label masks as unsigned integer (H, W) arrays. The
dataclasses here validate and carry metadata at module boundaries.
"""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import distance_transform as _edt
from ._kernels import label_components

POSITIVE = "positive"
NEGATIVE = "negative"


class DimensionMismatch(ValueError):
    """Raised when two rasters that must share a shape do not."""


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Multi-channel pixel grid, stored as (height, width, channels)."""

    width: int
    height: int
    channels: int
    bit_depth: int
    samples: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not 1 <= self.channels <= 16:
            raise ValueError("channels must be in 1..16")
        if self.bit_depth not in (8, 16):
            raise ValueError("bit_depth must be 8 or 16")
        expected = (self.height, self.width, self.channels)
        if self.samples.shape != expected:
            raise ValueError(f"samples shape {self.samples.shape} != {expected}")
        limit = 1 << self.bit_depth
        if self.samples.size and int(self.samples.max()) >= limit:
            raise ValueError(f"sample exceeds {self.bit_depth}-bit range")

    @classmethod
    def from_array(cls, arr, bit_depth=None):
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if bit_depth is None:
            bit_depth = 16 if arr.dtype.itemsize > 1 else 8
        dtype = np.uint16 if bit_depth == 16 else np.uint8
        arr = np.ascontiguousarray(arr.astype(dtype, copy=False))
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, bit_depth=bit_depth, samples=arr)

    def scaled(self):
        """Samples as float64 scaled per channel to [0, 1] by the bit depth."""
        return self.samples.astype(np.float64) / float((1 << self.bit_depth) - 1)


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Per-pixel integer labels; 0 is unlabeled/background."""

    width: int
    height: int
    labels: np.ndarray

    def __post_init__(self):
        if self.labels.shape != (self.height, self.width):
            raise ValueError("labels shape mismatch")
        if self.labels.size and int(self.labels.min()) < 0:
            raise ValueError("labels must be non-negative")
        if self.labels.size and int(self.labels.max()) > np.iinfo(np.uint16).max:
            raise ValueError("labels must fit 16 bits")

    @classmethod
    def from_array(cls, arr):
        arr = np.ascontiguousarray(np.asarray(arr).astype(np.uint16, copy=False))
        h, w = arr.shape
        return cls(width=w, height=h, labels=arr)

    def binary(self):
        return self.labels != 0


@dataclass(frozen=True)
class Click:
    """A single positive/negative annotation at pixel (x, y)."""

    x: int
    y: int
    polarity: str
    ordinal: int

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad polarity {self.polarity!r}")

    @property
    def is_positive(self):
        return self.polarity == POSITIVE


class ClickSet:
    """Ordered clicks; ordinals are gapless and follow placement order."""

    def __init__(self, clicks=()):
        self.clicks = []
        for c in clicks:
            self.add(c.x, c.y, c.polarity)

    def add(self, x, y, polarity):
        click = Click(x=int(x), y=int(y), polarity=polarity, ordinal=len(self.clicks))
        self.clicks.append(click)
        return click

    def undo(self):
        if not self.clicks:
            raise IndexError("no clicks to undo")
        return self.clicks.pop()

    def __len__(self):
        return len(self.clicks)

    def __iter__(self):
        return iter(self.clicks)

    def __getitem__(self, i):
        return self.clicks[i]


@dataclass(frozen=True, eq=False)
class EdgeMap:
    """Boundary prior in [0, 1]; the initial prior is identically zero."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.height, self.width):
            raise ValueError("edge map shape mismatch")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("edge map values must lie in [0, 1]")

    @classmethod
    def zeros(cls, width, height):
        return cls(width=width, height=height, values=np.zeros((height, width)))


@dataclass
class Category:
    id: int
    comment: str
    color: tuple = (128, 0, 0)
    deleted: bool = False

    def __post_init__(self):
        if self.id <= 0:
            raise ValueError("category id must be positive")
        if len(self.color) != 3 or any(not 0 <= c <= 255 for c in self.color):
            raise ValueError("color components must be in [0, 255]")


def _as_bool_mask(mask):
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError("mask must be 2-D")
    return arr != 0


def iou(a, b):
    """Intersection over union of two binary masks; empty vs empty is 1.0."""
    a = _as_bool_mask(a)
    b = _as_bool_mask(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def connected_components(mask, connectivity=8):
    """Label foreground components; ids in raster order of first pixel.

    Returns (labels, areas): labels is int32 (H, W) with 0 for background,
    areas[i] is the pixel count of component i + 1.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    fg = np.ascontiguousarray(_as_bool_mask(mask)).astype(np.uint8)
    labels, count = label_components(fg, connectivity)
    if count == 0:
        return labels, np.zeros(0, np.int64)
    areas = np.bincount(labels.ravel(), minlength=count + 1)[1:].astype(np.int64)
    return labels, areas


def distance_transform(mask):
    """Exact Euclidean distance to the nearest background pixel.

    Out-of-image pixels count as background, so distances are bounded by
    image borders; background pixels map to 0.
    """
    return _edt(_as_bool_mask(mask))
