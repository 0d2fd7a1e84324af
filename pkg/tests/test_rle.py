import json

import numpy as np
import pytest
from hypothesis import given

from conftest import FIXTURES, bool_rasters
from oracles import naive_encode, naive_runs
from sepl.errors import MalformedRle
from sepl.masks import BinaryMask
from sepl.rle import RleMask, decode_rle, encode_array, encode_rle, runs_of, runs_to_string, string_to_runs


def _fixtures():
    data = json.loads((FIXTURES / "rle_reference.json").read_text())
    return data["cases"]


def _fixture_array(case):
    h, w = case["size"]
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(case["bits_row_major_hex"]), np.uint8))
    return bits[: h * w].reshape(h, w).astype(bool)


def test_runs_6_4_6_layout():
    target = np.zeros(16, bool)
    target[6:10] = True
    target = target.reshape(4, 4, order="F")
    counts = naive_encode(target)
    assert counts == "646"
    m = decode_rle(RleMask((4, 4), counts))
    assert np.array_equal(m.to_array(), target)
    assert m.area == 4


def test_single_background_run():
    assert string_to_runs(encode_array(np.zeros((4, 4))).counts) == [16]
    assert decode_rle(RleMask((4, 4), runs_to_string([16]))).area == 0


def test_leading_zero_run_means_all_foreground():
    m = decode_rle(RleMask((4, 4), runs_to_string([0, 16])))
    assert m.area == 16
    assert string_to_runs(encode_array(np.ones((4, 4))).counts) == [0, 16]


def test_alternating_2x2_runs():
    # column-major 0,1,0,1
    stripes = np.array([[0, 0], [1, 1]])
    assert runs_of(BinaryMask.from_array(stripes).flat()) == [1, 1, 1, 1]
    checker = np.array([[1, 0], [0, 1]])
    assert runs_of(BinaryMask.from_array(checker).flat()) == naive_runs(checker.tolist()) == [0, 1, 2, 1]


@pytest.mark.parametrize("case", _fixtures(), ids=lambda c: c["name"])
def test_reference_fixtures(case):
    expected = _fixture_array(case)
    m = decode_rle(RleMask(tuple(case["size"]), case["counts"]))
    assert np.array_equal(m.to_array(), expected)
    assert m.area == case["area"]
    assert encode_rle(m).counts == case["counts"]


@given(bool_rasters(max_side=40))
def test_round_trip(arr):
    m = BinaryMask.from_array(arr)
    rle = encode_rle(m)
    assert decode_rle(rle) == m
    assert encode_rle(decode_rle(rle)) == rle
    assert rle.counts == naive_encode(arr.tolist())


@given(bool_rasters(max_side=12))
def test_counts_sum_to_pixels(arr):
    runs = string_to_runs(encode_array(arr).counts)
    assert sum(runs) == arr.size
    assert all(r > 0 for r in runs[1:])


def test_zero_interior_runs_are_normalized():
    runs = [2, 0, 3, 4, 0, 0, 7]  # 16 pixels with empty interior runs
    m = decode_rle(RleMask((4, 4), runs_to_string(runs)))
    assert string_to_runs(encode_rle(m).counts) == [5, 4, 7]


def test_large_counts_use_several_chunks():
    m = BinaryMask.from_array(np.pad(np.ones((200, 200)), ((0, 56), (0, 56))))
    rle = encode_rle(m)
    assert decode_rle(rle) == m
    assert all(48 <= ord(c) <= 111 for c in rle.counts)


@pytest.mark.parametrize(
    "counts, size, why",
    [
        ("6 4", (4, 4), "code point"),
        ("646~", (4, 4), "code point"),
        ("6`", (4, 4), "truncated"),
        ("64", (4, 4), "sum"),
        ("6467", (4, 4), "sum"),
        ("4O", (4, 4), "negative"),
    ],
)
def test_malformed(counts, size, why):
    with pytest.raises(MalformedRle):
        decode_rle(RleMask(size, counts))


def test_bytes_counts_accepted():
    rle = RleMask.from_json({"size": [4, 4], "counts": b"646"})
    assert decode_rle(rle).area == 4
