from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtfnet.data import (
    ImageBuffer,
    ImageFormatError,
    batch_indices,
    encode_image,
    extract_patches,
    from_tensor,
    list_images,
    make_batches,
    quantize,
    read_image,
    to_tensor,
    write_image,
)
from rtfnet.tensor import Tensor


def test_read_minimal_p5(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5 2 2 255\n" + bytes([1, 2, 3, 4]))
    img = read_image(p)
    assert img.dims == (2, 2, 1)
    assert img.samples[:, :, 0].tolist() == [[1, 2], [3, 4]]


def test_read_p6_pixels(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 255, 0]))
    img = read_image(p)
    assert img.samples[0].tolist() == [[255, 0, 0], [0, 255, 0]]


def test_read_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n1 1\n# max\n255\n\x07")
    assert read_image(p).samples.item() == 7


@pytest.mark.parametrize(
    "raw,match",
    [
        (b"P3\n1 1\n255\n1", "magic"),
        (b"P5\n1 1\n65535\n\x00\x00", "maxval"),
        (b"P5\n2 2\n255\n\x00", "truncated"),
        (b"P5\n2", "header"),
    ],
)
def test_read_errors(tmp_path, raw, match):
    p = tmp_path / "bad.pgm"
    p.write_bytes(raw)
    with pytest.raises(ImageFormatError, match=match):
        read_image(p)


def test_encode_single_grey_pixel():
    raw = encode_image(ImageBuffer(np.array([[128]], dtype=np.uint8)))
    assert raw == b"P5\n1 1\n255\n\x80"
    assert len(raw) == 12  # 3 + 4 + 4 header bytes + 1 sample


def test_colour_magic_is_p6():
    assert encode_image(ImageBuffer(np.zeros((1, 1, 3), dtype=np.uint8))).startswith(b"P6\n")


@pytest.mark.parametrize("c", [1, 3])
def test_write_read_round_trip(tmp_path, rng, c):
    img = ImageBuffer(rng.integers(0, 256, (7, 5, c), dtype=np.uint8))
    write_image(img, tmp_path / "x.pnm")
    assert read_image(tmp_path / "x.pnm") == img
    assert [p.name for p in tmp_path.iterdir()] == ["x.pnm"]  # no temp files left behind


def test_list_images_sorted(tmp_path):
    for name in ("b.pgm", "a.PPM", "notes.txt"):
        (tmp_path / name).write_bytes(b"")
    assert [p.name for p in list_images(tmp_path)] == ["a.PPM", "b.pgm"]
    with pytest.raises(FileNotFoundError):
        list_images(tmp_path / "missing")


def test_buffer_validation():
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((2, 2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        ImageBuffer(np.array([[300]]))
    assert ImageBuffer(np.array([[3.0]])).samples.dtype == np.uint8


def test_tensor_conversion_endpoints():
    img = ImageBuffer(np.array([[0, 255]], dtype=np.uint8))
    t = to_tensor(img)
    assert t.shape == (1, 1, 1, 2) and t.data.tolist() == [[[[0.0, 1.0]]]]
    assert from_tensor(t) == img


def test_quantize_rules():
    assert quantize(np.array([0.5]))[0] == 128
    assert quantize(np.array([1.7]))[0] == 255
    assert quantize(np.array([-0.2]))[0] == 0
    with pytest.raises(ValueError):
        quantize(np.array([1.7]), clamp=False)
    with pytest.raises(ValueError):
        quantize(np.array([np.nan]))


def test_to_tensor_round_trip_all_values():
    img = ImageBuffer(np.arange(256, dtype=np.uint8).reshape(16, 16))
    assert from_tensor(to_tensor(img)) == img
    assert from_tensor(to_tensor(img, np.float64)) == img


def test_single_placement_patch():
    img = ImageBuffer(np.zeros((64, 64), dtype=np.uint8))
    ps = extract_patches(img, 64, 5, seed=123)
    assert ps.offsets == [(0, 0)] * 5


def test_patches_in_bounds_and_deterministic(rng):
    img = ImageBuffer(rng.integers(0, 256, (100, 80), dtype=np.uint8))
    ps = extract_patches(img, 64, 1000, seed=5, source_id="x")
    assert all(0 <= t <= 36 and 0 <= l <= 16 for t, l in ps.offsets)
    assert ps.offsets == extract_patches(img, 64, 1000, seed=5).offsets
    t, l = ps.offsets[17]
    assert np.array_equal(ps.samples[17], img.samples[t : t + 64, l : l + 64])
    assert len(ps) == 1000 and ps.tensors()[0].shape == (1, 1, 64, 64)


def test_patch_larger_than_image():
    with pytest.raises(ValueError):
        extract_patches(ImageBuffer(np.zeros((10, 80), dtype=np.uint8)), 64)


def test_batch_sizes():
    assert [len(b) for b in batch_indices(70, 32, 0)] == [32, 32, 6]


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 200), batch=st.integers(1, 40), seed=st.integers(0, 2**63))
def test_batches_partition_input(n, batch, seed):
    groups = batch_indices(n, batch, seed)
    assert sorted(np.concatenate(groups).tolist()) == list(range(n))
    assert all(len(g) == batch for g in groups[:-1])
    assert all(np.array_equal(a, b) for a, b in zip(groups, batch_indices(n, batch, seed)))


def test_make_batches(rng):
    pairs = [(Tensor(np.full((1, 1, 2, 2), i)), Tensor(np.full((1, 1, 2, 2), -i))) for i in range(70)]
    batches = make_batches(pairs, 32, seed=4)
    assert [b[0].shape[0] for b in batches] == [32, 32, 6]
    ids = Counter(int(v) for noisy, _ in batches for v in noisy.data[:, 0, 0, 0])
    assert ids == Counter(range(70))
    for noisy, clean in batches:
        np.testing.assert_array_equal(noisy.data, -clean.data)
    with pytest.raises(ValueError):
        make_batches([], 4)
