"""Raster primitives: label maps, packed binary masks and their set algebra.

Binary masks are stored as packed 64-bit words laid out in column-major pixel
order (the same order used by COCO run-length encoding), so intersections and
unions are word-parallel and areas are popcounts.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ClassOutOfRange, DimensionMismatch, EmptyList

IGNORE = 255
BACKGROUND = 0


def _pack(bits: np.ndarray) -> np.ndarray:
    """Pack a flat bool vector into little-endian-bit uint64 words."""
    n = bits.size
    padded = np.zeros(((n + 63) // 64) * 64, dtype=bool)
    padded[:n] = bits
    return np.packbits(padded, bitorder="little").view("<u8").copy()


def _popcount(words: np.ndarray) -> int:
    return int(np.bitwise_count(words).sum())


class BinaryMask:
    """Immutable H x W binary raster with a cached area."""

    __slots__ = ("height", "width", "words", "area")

    def __init__(self, words: np.ndarray, height: int, width: int, area: Optional[int] = None):
        if height <= 0 or width <= 0:
            raise DimensionMismatch(f"mask dimensions must be positive, got {height}x{width}")
        words = np.asarray(words, dtype=np.uint64)
        if words.size != (height * width + 63) // 64:
            raise DimensionMismatch("word count does not match dimensions")
        words.setflags(write=False)
        self.height = int(height)
        self.width = int(width)
        self.words = words
        self.area = _popcount(words) if area is None else int(area)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "BinaryMask":
        array = np.asarray(array)
        if array.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D raster, got shape {array.shape}")
        h, w = array.shape
        return cls(_pack(array.astype(bool).ravel(order="F")), h, w)

    @classmethod
    def from_flat(cls, bits: np.ndarray, height: int, width: int) -> "BinaryMask":
        """Build from a flat column-major bit vector."""
        bits = np.asarray(bits, dtype=bool)
        if bits.size != height * width:
            raise DimensionMismatch(f"{bits.size} bits do not fill {height}x{width}")
        return cls(_pack(bits), height, width)

    @classmethod
    def empty(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height * width + 63) // 64, dtype=np.uint64), height, width, 0)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def flat(self) -> np.ndarray:
        """Column-major bool vector of length H*W."""
        bits = np.unpackbits(self.words.view(np.uint8), bitorder="little")
        return bits[: self.height * self.width].astype(bool)

    def to_array(self) -> np.ndarray:
        return self.flat().reshape((self.height, self.width), order="F")

    def first_index(self) -> int:
        """Column-major index of the first set pixel, or H*W when empty."""
        nz = np.flatnonzero(self.words)
        if nz.size == 0:
            return self.height * self.width
        word = int(self.words[nz[0]])
        return int(nz[0]) * 64 + ((word & -word).bit_length() - 1)

    def _check(self, other: "BinaryMask") -> None:
        if self.shape != other.shape:
            raise DimensionMismatch(f"{self.shape} vs {other.shape}")

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        self._check(other)
        return BinaryMask(self.words & other.words, self.height, self.width)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        self._check(other)
        return BinaryMask(self.words | other.words, self.height, self.width)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.words, other.words))

    def __hash__(self) -> int:
        return hash((self.height, self.width, self.words.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.height}x{self.width}, area={self.area})"


@dataclass(frozen=True)
class ClassSlice:
    class_id: int
    region: BinaryMask

    @property
    def area(self) -> int:
        return self.region.area


class LabelMap:
    """H x W raster of class indices; 0 is background and 255 is ignore."""

    __slots__ = ("data", "num_classes")

    def __init__(self, data: np.ndarray, num_classes: Optional[int] = None):
        data = np.asarray(data)
        if data.ndim != 2 or data.shape[0] <= 0 or data.shape[1] <= 0:
            raise DimensionMismatch(f"label map must be a non-empty 2-D raster, got {data.shape}")
        if data.size and (data.min() < 0 or data.max() > IGNORE):
            raise ClassOutOfRange("label values must lie in 0..255")
        data = np.array(data, dtype=np.uint8)
        data.setflags(write=False)
        if num_classes is not None:
            if not 0 <= num_classes < IGNORE:
                raise ClassOutOfRange(f"class count {num_classes} out of range")
            bad = (data > num_classes) & (data != IGNORE)
            if bad.any():
                raise ClassOutOfRange(
                    f"value {int(data[bad].max())} exceeds class count {num_classes}"
                )
        self.data = data
        self.num_classes = num_classes

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def class_count(self) -> int:
        """K: declared class count, or the largest foreground value present."""
        if self.num_classes is not None:
            return self.num_classes
        fg = self.data[self.data != IGNORE]
        return int(fg.max()) if fg.size else 0

    def classes_present(self) -> list[int]:
        values = np.unique(self.data)
        return [int(v) for v in values if v != BACKGROUND and v != IGNORE]

    def ignore_area(self) -> int:
        return int((self.data == IGNORE).sum())

    def background_area(self) -> int:
        return int((self.data == BACKGROUND).sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelMap):
            return NotImplemented
        return bool(np.array_equal(self.data, other.data))

    def __repr__(self) -> str:
        return f"LabelMap({self.height}x{self.width}, classes={self.classes_present()})"


MaskLike = Union[BinaryMask, ClassSlice]


def _region(x: MaskLike) -> BinaryMask:
    return x.region if isinstance(x, ClassSlice) else x


def slice_of(label_map: LabelMap, k: int) -> ClassSlice:
    upper = label_map.num_classes if label_map.num_classes is not None else IGNORE - 1
    if not 1 <= k <= upper:
        raise ClassOutOfRange(f"class {k} outside 1..{upper}")
    return ClassSlice(k, BinaryMask.from_array(label_map.data == k))


def intersect_count(a: MaskLike, b: MaskLike) -> int:
    """Number of pixels set in both rasters."""
    ra, rb = _region(a), _region(b)
    ra._check(rb)
    return _popcount(ra.words & rb.words)


def union_merge(masks: Sequence[MaskLike]) -> BinaryMask:
    if not masks:
        raise EmptyList("union_merge needs at least one mask")
    regions = [_region(m) for m in masks]
    if len(regions) == 1:
        return regions[0]
    first = regions[0]
    for r in regions[1:]:
        first._check(r)
    words = reduce(np.bitwise_or, (r.words for r in regions))
    return BinaryMask(words, first.height, first.width)

