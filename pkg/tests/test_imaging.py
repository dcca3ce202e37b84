import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malelm import imaging
from malelm.imaging import GrayImage, bytes_to_image, flatten_2d, resample_1d, resize, width_for_size

KB = 1024


@pytest.mark.parametrize(
    "nbytes, width",
    [
        (0, 32),
        (45 * KB, 128),
        (1_536_000, 1024),
        (10 * KB, 64),
        (10 * KB - 1, 32),
        (1000 * KB, 1024),
        (1000 * KB - 1, 768),
    ],
)
def test_width_for_size(nbytes, width):
    assert width_for_size(nbytes) == width


@given(st.integers(0, 3_000_000), st.integers(0, 3_000_000))
def test_width_monotone(a, b):
    lo, hi = sorted((a, b))
    assert width_for_size(lo) <= width_for_size(hi)


def test_bytes_to_image_exact_fill():
    img = bytes_to_image(bytes([0, 128, 255, 7]), width=2)
    assert img.pixels.tolist() == [[0, 128], [255, 7]]


def test_bytes_to_image_pads_last_row_with_zero():
    img = bytes_to_image(bytes([10, 20, 30]), width=2)
    assert img.pixels.tolist() == [[10, 20], [30, 0]]


def test_bytes_to_image_table_width():
    img = bytes_to_image(bytes(10240))
    assert (img.width, img.height) == (64, 160)


def test_bytes_to_image_empty():
    with pytest.raises(ValueError, match="empty file"):
        bytes_to_image(b"")


@given(st.binary(min_size=1, max_size=5000), st.integers(1, 300))
def test_bytes_round_trip(data, width):
    img = bytes_to_image(data, width=width)
    flat = img.pixels.reshape(-1)
    assert bytes(flat[: len(data)]) == data
    assert not flat[len(data):].any()
    assert img.height == -(-len(data) // width)


def test_gray_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        GrayImage(np.array([[0, 256]]))
    with pytest.raises(ValueError):
        GrayImage(np.zeros((0, 3), dtype=np.uint8))


def test_gray_image_is_read_only():
    img = GrayImage(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1


@pytest.mark.parametrize("method", imaging.RESIZE_METHODS)
@pytest.mark.parametrize("size", [(1, 1), (3, 7), (64, 64), (5, 2)])
def test_resize_constant(method, size):
    img = GrayImage(np.full((2, 2), 100, dtype=np.uint8))
    out = resize(img, *size, method=method)
    assert out.shape == (size[1], size[0])
    assert (out.pixels == 100).all()


def test_resize_identity():
    rng = np.random.default_rng(3)
    img = GrayImage(rng.integers(0, 256, (9, 13), dtype=np.uint8))
    assert resize(img, 13, 9) == img


def test_resize_upsample_row_matches_linear_reference():
    img = GrayImage(np.array([[0, 255]], dtype=np.uint8))
    out = resize(img, 4, 1).pixels[0]
    # independent reference: 1-D linear interpolation at corner-aligned points
    expected = np.interp(np.linspace(0, 1, 4), [0, 1], [0, 255])
    assert np.all(np.diff(out.astype(int)) >= 0)
    assert out[0] == 0 and out[-1] == 255
    np.testing.assert_array_equal(out, np.rint(expected))


def test_resize_bilinear_against_bruteforce():
    rng = np.random.default_rng(11)
    src = rng.integers(0, 256, (5, 6)).astype(float)
    out = resize(GrayImage(src.astype(np.uint8)), 9, 4).pixels

    def sample(y, x):
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        y1, x1 = min(y0 + 1, 4), min(x0 + 1, 5)
        fy, fx = y - y0, x - x0
        top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
        bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
        return top * (1 - fy) + bot * fy

    for i in range(4):
        for j in range(9):
            assert out[i, j] == np.rint(sample(i * 4 / 3, j * 5 / 8))


def test_resize_rejects_zero_target():
    img = GrayImage(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        resize(img, 0, 3)


def test_flatten_2d():
    assert flatten_2d(GrayImage(np.array([[0, 255]], dtype=np.uint8))).tolist() == [0.0, 1.0]
    v = flatten_2d(GrayImage(np.array([[0, 51], [102, 255]], dtype=np.uint8)))
    assert v.tolist() == [0.0, 0.2, 0.4, 1.0]
    v = flatten_2d(GrayImage(np.full((3, 4), 128, dtype=np.uint8)))
    assert np.all(v == 128 / 255)


def test_flatten_ordering():
    px = np.arange(12, dtype=np.uint8).reshape(3, 4)
    v = flatten_2d(GrayImage(px))
    for k in range(12):
        assert v[k] * 255 == px[k // 4, k % 4]


def _block_mean_oracle(values, n):
    values = list(values)
    while len(values) % n:
        values.append(0.0)
    block = len(values) // n
    return [sum(values[i * block:(i + 1) * block]) / block for i in range(n)]


def test_resample_examples():
    np.testing.assert_allclose(resample_1d([0.0, 0.2, 0.4, 0.6], 2), [0.1, 0.5])
    np.testing.assert_allclose(resample_1d([0.3, 0.6, 0.9], 2), [0.45, 0.45])
    np.testing.assert_allclose(resample_1d([0.3, 0.6, 0.9], 2), _block_mean_oracle([0.3, 0.6, 0.9], 2))


def test_resample_empty_input():
    assert resample_1d([], 4).tolist() == [0.0] * 4


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=300), st.integers(1, 64))
def test_resample_matches_oracle(values, n):
    out = resample_1d(values, n)
    assert out.shape == (n,)
    np.testing.assert_allclose(out, _block_mean_oracle(values, n), atol=1e-12)
    assert np.all((out >= 0) & (out <= 1))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.integers(1, 8))
def test_resample_preserves_mean_when_divisible(values, reps):
    values = values * reps
    n = len(values) // reps
    np.testing.assert_allclose(resample_1d(values, n).mean(), np.mean(values), atol=1e-12)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_resample_identity(values):
    np.testing.assert_array_equal(resample_1d(values, len(values)), values)


@pytest.mark.parametrize("suffix", [".png", ".pgm"])
def test_image_file_round_trip(tmp_path, suffix):
    img = bytes_to_image(bytes(range(256)) * 3, width=32)
    path = tmp_path / f"x{suffix}"
    imaging.write_image(img, path)
    assert imaging.read_image(path) == img
    if suffix == ".pgm":
        assert path.read_bytes().startswith(b"P5")
