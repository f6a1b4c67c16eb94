import numpy as np
import pytest
from PIL import Image

from forge.image import (
    ImageFormatError, apply_mask, as_image, as_mask, complement, load_image, load_mask,
    quantize, save_image, save_mask,
)


def write_gray(path, data):
    Image.fromarray(np.asarray(data, dtype=np.uint8), mode="L").save(path)


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_load_extremes(tmp_path, suffix):
    write_gray(tmp_path / f"a{suffix}", np.full((3, 4), 255))
    write_gray(tmp_path / f"b{suffix}", np.zeros((3, 4)))
    a = load_image(tmp_path / f"a{suffix}")
    b = load_image(tmp_path / f"b{suffix}")
    assert a.shape == (3, 4, 1)
    assert np.all(a == 1.0)
    assert np.all(b == 0.0)


def test_load_midvalue(tmp_path):
    write_gray(tmp_path / "m.pgm", [[128]])
    assert load_image(tmp_path / "m.pgm")[0, 0, 0] == pytest.approx(0.50196, abs=1e-5)
    assert load_image(tmp_path / "m.pgm")[0, 0, 0] == 128 / 255


def test_rgb_channels_preserved(tmp_path):
    data = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3) * 10
    Image.fromarray(data, mode="RGB").save(tmp_path / "c.ppm")
    img = load_image(tmp_path / "c.ppm")
    assert img.shape == (2, 3, 3)
    assert np.array_equal(img * 255, data.astype(float))


def test_alpha_rejected(tmp_path):
    Image.new("RGBA", (2, 2)).save(tmp_path / "a.png")
    with pytest.raises(ImageFormatError, match="alpha"):
        load_image(tmp_path / "a.png")


def test_unsupported_and_unreadable(tmp_path):
    Image.new("RGB", (2, 2)).save(tmp_path / "x.bmp")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "x.bmp")
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "junk.png")
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.png")


def test_sixteen_bit_rejected(tmp_path):
    Image.fromarray(np.full((2, 2), 40000, dtype=np.uint16)).save(tmp_path / "d.png")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "d.png")


def test_quantize_rounding():
    assert quantize(np.array([1.0]))[0] == 255
    assert quantize(np.array([0.5]))[0] == 128
    assert quantize(np.array([0.0]))[0] == 0
    # 127.5 / 255 is exactly representable as a half step
    assert quantize(np.array([127.5 / 255]))[0] == 128


@pytest.mark.parametrize("suffix,channels", [(".png", 1), (".png", 3), (".pgm", 1), (".ppm", 3)])
def test_lattice_roundtrip(tmp_path, suffix, channels):
    rng = np.random.default_rng(7)
    img = rng.integers(0, 256, (9, 11, channels)) / 255.0
    save_image(img, tmp_path / f"r{suffix}")
    back = load_image(tmp_path / f"r{suffix}")
    assert np.array_equal(back, img)


def test_roundtrip_error_bound(tmp_path):
    img = np.random.default_rng(1).random((8, 8, 3))
    save_image(img, tmp_path / "r.png")
    assert np.abs(load_image(tmp_path / "r.png") - img).max() <= 1 / 510 + 1e-12


def test_pnm_header_is_binary_maxval_255(tmp_path):
    save_image(np.zeros((2, 3, 1)), tmp_path / "h.pgm")
    save_image(np.zeros((2, 3, 3)), tmp_path / "h.ppm")
    assert (tmp_path / "h.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")
    assert (tmp_path / "h.ppm").read_bytes().startswith(b"P6\n3 2\n255\n")


def test_load_mask_threshold(tmp_path):
    write_gray(tmp_path / "k.png", [[127, 128], [0, 255]])
    mask = load_mask(tmp_path / "k.png")
    assert mask.tolist() == [[False, True], [False, True]]
    assert load_mask(tmp_path / "k.png", threshold=0).all()


def test_load_mask_counts(tmp_path):
    data = np.random.default_rng(3).integers(0, 256, (10, 10))
    write_gray(tmp_path / "k.png", data)
    mask = load_mask(tmp_path / "k.png", 100)
    assert mask.dtype == bool
    assert mask.sum() == (data >= 100).sum()


def test_load_mask_rejects_rgb(tmp_path):
    Image.new("RGB", (2, 2)).save(tmp_path / "k.png")
    with pytest.raises(ImageFormatError, match="single-channel"):
        load_mask(tmp_path / "k.png")


def test_save_mask_roundtrip(tmp_path):
    mask = np.random.default_rng(4).random((5, 6)) > 0.5
    save_mask(mask, tmp_path / "m.png")
    assert np.array_equal(load_mask(tmp_path / "m.png"), mask)


def test_pointwise_helpers_shape():
    img = np.random.default_rng(0).random((4, 5, 3))
    mask = np.zeros((4, 5), dtype=bool)
    mask[1:3, 2:4] = True
    assert apply_mask(img, mask).shape == img.shape
    assert np.array_equal(apply_mask(img, mask) + apply_mask(img, complement(mask)), img)


def test_validators():
    assert as_image(np.zeros((2, 2))).shape == (2, 2, 1)
    with pytest.raises(ValueError):
        as_image(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        as_mask(np.array([[0, 2]]))
    assert as_mask(np.array([[0, 1]])).dtype == bool
