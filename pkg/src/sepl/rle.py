"""COCO compressed run-length encoding.

Runs alternate background/foreground over the column-major pixel sequence and
always start with a background run. Each count is written as little-endian
5-bit groups, one printable character per group (code point 48 + value), with
0x20 as the continuation flag; the last group's bit 0x10 sign-extends. From the
fourth count on, a count is stored as the difference to the count two places
earlier, exactly as pycocotools' ``rleToString`` does.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, MalformedRle
from .masks import BinaryMask

_OFFSET = 48
_MAX_CODE = 111


@dataclass(frozen=True)
class RleMask:
    size: tuple[int, int]
    counts: str

    @property
    def height(self) -> int:
        return self.size[0]

    @property
    def width(self) -> int:
        return self.size[1]

    def to_json(self) -> dict:
        return {"size": [self.size[0], self.size[1]], "counts": self.counts}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRle(f"bad RLE object: {exc}") from None
        if isinstance(counts, bytes):
            counts = counts.decode("ascii", errors="replace")
        if not isinstance(counts, str):
            raise MalformedRle("compressed counts must be a string")
        return cls((int(h), int(w)), counts)


def runs_of(bits: np.ndarray) -> list[int]:
    """Run lengths of a flat 0/1 sequence, starting with a (possibly empty) 0-run."""
    bits = np.asarray(bits, dtype=bool)
    n = bits.size
    if n == 0:
        return [0]
    change = np.flatnonzero(bits[1:] != bits[:-1]) + 1
    bounds = np.concatenate(([0], change, [n]))
    runs = np.diff(bounds).tolist()
    if bits[0]:
        runs.insert(0, 0)
    return runs


_MAX_CHUNKS = 13  # 65 bits: more than any count that fits in int64


def runs_to_string(runs: Sequence[int]) -> str:
    runs = np.asarray(runs, dtype=np.int64)
    if runs.size == 0:
        return ""
    values = runs.copy()
    values[3:] -= runs[1:-2]
    chars = np.empty((values.size, _MAX_CHUNKS), dtype=np.uint8)
    emit = np.zeros((values.size, _MAX_CHUNKS), dtype=bool)
    live = np.ones(values.size, dtype=bool)
    x = values
    for j in range(_MAX_CHUNKS):
        c = x & 0x1F
        x = x >> 5
        more = np.where(c & 0x10, x != -1, x != 0)
        chars[:, j] = (c | np.where(more, 0x20, 0)) + _OFFSET
        emit[:, j] = live
        live = live & more
        if not live.any():
            return chars[emit].tobytes().decode("ascii")
    raise ValueError("run length too large to encode")


def string_to_runs(counts: str) -> list[int]:
    try:
        raw = np.frombuffer(counts.encode("ascii"), dtype=np.uint8)
    except UnicodeEncodeError:
        raise MalformedRle("counts contain non-ASCII characters") from None
    if raw.size == 0:
        return []
    if raw.min() < _OFFSET or raw.max() > _MAX_CODE:
        bad = raw[(raw < _OFFSET) | (raw > _MAX_CODE)][0]
        raise MalformedRle(f"code point {bad} outside {_OFFSET}..{_MAX_CODE}")
    c = raw.astype(np.int64) - _OFFSET
    last = (c & 0x20) == 0
    if not last[-1]:
        raise MalformedRle("truncated chunk sequence")
    ends = np.flatnonzero(last)
    starts = np.concatenate(([0], ends[:-1] + 1))
    lengths = ends - starts + 1
    if lengths.max() > 12:
        raise MalformedRle("count too long")
    pos = np.arange(c.size) - np.repeat(starts, lengths)
    values = np.add.reduceat((c & 0x1F) << (5 * pos), starts)
    negative = (c[ends] & 0x10) != 0
    values[negative] -= np.left_shift(1, 5 * lengths[negative])
    counts_ = values.copy()
    if counts_.size > 3:
        odd = counts_[1::2]
        counts_[1::2] = np.cumsum(odd)
        even = counts_[2::2]
        counts_[2::2] = np.cumsum(even)
    neg = np.flatnonzero(counts_ < 0)
    if neg.size:
        raise MalformedRle(f"negative run length {int(counts_[neg[0]])} at run {int(neg[0])}")
    return counts_.tolist()


def decode_runs(runs: Sequence[int], height: int, width: int) -> BinaryMask:
    total = height * width
    if sum(runs) != total:
        raise MalformedRle(f"run lengths sum to {sum(runs)}, expected {total}")
    values = np.arange(len(runs)) % 2 == 1
    bits = np.repeat(values, np.asarray(runs, dtype=np.int64))
    return BinaryMask.from_flat(bits, height, width)


def decode_rle(rle: RleMask) -> BinaryMask:
    h, w = rle.size
    if h <= 0 or w <= 0:
        raise MalformedRle(f"non-positive size {rle.size}")
    return decode_runs(string_to_runs(rle.counts), h, w)


def encode_rle(mask: BinaryMask) -> RleMask:
    if mask.height <= 0 or mask.width <= 0:
        raise DimensionMismatch("mask dimensions must be positive")
    return RleMask((mask.height, mask.width), runs_to_string(runs_of(mask.flat())))


def encode_array(array: np.ndarray) -> RleMask:
    return encode_rle(BinaryMask.from_array(array))
