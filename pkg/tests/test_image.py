import numpy as np
import pytest
from PIL import Image

from restopipe.errors import CorruptData, UnsupportedFormat
from restopipe.image import ImageBuffer, load_image, save_image


def test_all_255_loads_as_ones(tmp_path):
    p = tmp_path / "white.png"
    Image.fromarray(np.full((16, 16, 3), 255, dtype=np.uint8)).save(p)
    img = load_image(p)
    assert img.data.min() == img.data.max() == 1.0


def test_all_zero_loads_as_zeros(tmp_path):
    p = tmp_path / "black.png"
    Image.fromarray(np.zeros((16, 16, 3), dtype=np.uint8)).save(p)
    img = load_image(p)
    assert img.data.min() == img.data.max() == 0.0


def test_byte_128_scales_to_128_over_255(tmp_path):
    p = tmp_path / "mid.png"
    Image.fromarray(np.full((16, 16, 3), 128, dtype=np.uint8)).save(p)
    img = load_image(p)
    assert img.data.flat[0] == pytest.approx(128 / 255, abs=1e-12)


def test_grayscale_replicates_to_rgb(tmp_path):
    p = tmp_path / "gray.png"
    Image.fromarray(np.full((20, 20), 70, dtype=np.uint8), mode="L").save(p)
    img = load_image(p)
    assert img.channels == 3
    assert np.array_equal(img.data[:, :, 0], img.data[:, :, 1])
    assert np.array_equal(img.data[:, :, 1], img.data[:, :, 2])


def test_save_rounds_half_away_from_zero(tmp_path):
    img = ImageBuffer.from_array(np.full((16, 16, 3), 0.5))
    p = tmp_path / "half.png"
    save_image(img, p)
    assert np.asarray(Image.open(p)).flat[0] == 128  # 127.5 rounds up


def test_intensity_one_saves_as_255(tmp_path):
    img = ImageBuffer.from_array(np.ones((16, 16, 3)))
    p = tmp_path / "one.png"
    save_image(img, p)
    assert np.asarray(Image.open(p)).flat[0] == 255


def test_byte_roundtrip_is_identity(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(24, 31, 3), dtype=np.uint8)
    p1 = tmp_path / "a.png"
    p2 = tmp_path / "b.png"
    Image.fromarray(raw).save(p1)
    save_image(load_image(p1), p2)
    assert np.array_equal(np.asarray(Image.open(p1)), np.asarray(Image.open(p2)))


def test_grid_roundtrip_is_identity(tmp_path):
    rng = np.random.default_rng(1)
    arr = rng.integers(0, 256, size=(17, 19, 3)).astype(np.float64) / 255.0
    img = ImageBuffer.from_array(arr)
    p = tmp_path / "grid.png"
    save_image(img, p)
    assert load_image(p).same_pixels(img)


def test_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        load_image("/nonexistent/nothing.png")


def test_non_png_rejected(tmp_path):
    p = tmp_path / "img.jpg"
    Image.fromarray(np.zeros((16, 16, 3), dtype=np.uint8)).save(p, format="JPEG")
    with pytest.raises(UnsupportedFormat):
        load_image(p)


def test_alpha_rejected(tmp_path):
    p = tmp_path / "rgba.png"
    Image.fromarray(np.zeros((16, 16, 4), dtype=np.uint8), mode="RGBA").save(p)
    with pytest.raises(UnsupportedFormat):
        load_image(p)


def test_16bit_rejected(tmp_path):
    p = tmp_path / "deep.png"
    Image.fromarray(np.zeros((16, 16), dtype=np.uint16), mode="I;16").save(p)
    with pytest.raises(UnsupportedFormat):
        load_image(p)


def test_corrupt_data_rejected(tmp_path):
    p = tmp_path / "broken.png"
    p.write_bytes(b"\x89PNG\r\n\x1a\n" + b"garbage" * 10)
    with pytest.raises(CorruptData):
        load_image(p)


def test_buffer_rejects_out_of_range():
    with pytest.raises(ValueError):
        ImageBuffer.from_array(np.full((16, 16, 3), 1.5))


def test_buffer_rejects_small_images():
    with pytest.raises(ValueError):
        ImageBuffer.from_array(np.zeros((8, 32, 3)))


def test_buffer_is_immutable(clean64):
    with pytest.raises(ValueError):
        clean64.data[0, 0, 0] = 0.5
