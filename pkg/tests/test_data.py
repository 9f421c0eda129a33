import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image

from vitforge.data import (
    IMAGENET,
    DatasetManifest,
    ImageRGB,
    NormalizationSpec,
    batch_iter,
    decode_image,
    denormalize,
    epoch_order,
    index_batches,
    normalize,
    resize_bilinear,
    scan_dataset,
    to_normalized_tensor,
)
from vitforge.errors import ConfigError, DecodeError, DimensionError

from oracles import brute_force_bilinear


def png_bytes(arr, mode="RGB"):
    buf = io.BytesIO()
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode).save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, colour=(10, 20, 30), size=4):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", (size, size), colour).save(path)


def make_tree(root, layout):
    for cls, n in layout.items():
        (root / "train" / cls).mkdir(parents=True, exist_ok=True)
        for i in range(n):
            write_png(root / "train" / cls / f"img{i}.png")
    return root


# --- scan ---------------------------------------------------------------------

def test_scan_labels_follow_sorted_dirs(tmp_path):
    make_tree(tmp_path, {"nofire": 3, "fire": 2})
    m = scan_dataset(tmp_path, "train")
    assert len(m) == 5
    assert m.class_names == ["fire", "nofire"]
    assert m.class_counts() == {"fire": 2, "nofire": 3}
    assert {lbl for p, lbl in m.entries if "/fire/" in p} == {0}
    assert {lbl for p, lbl in m.entries if "/nofire/" in p} == {1}


def test_scan_skips_non_images_and_accepts_any_case(tmp_path):
    make_tree(tmp_path, {"fire": 1, "nofire": 1})
    (tmp_path / "train" / "fire" / "notes.txt").write_text("x")
    (tmp_path / "train" / "fire" / "thumbs.db").write_bytes(b"\0")
    write_png(tmp_path / "train" / "fire" / "UPPER.PNG")
    Image.new("RGB", (4, 4)).save(tmp_path / "train" / "nofire" / "a.JpEg", format="JPEG")
    m = scan_dataset(tmp_path, "train")
    assert len(m) == 4


def test_scan_missing_split(tmp_path):
    with pytest.raises(ConfigError, match="split directory"):
        scan_dataset(tmp_path, "test")


def test_scan_zero_classes(tmp_path):
    (tmp_path / "val").mkdir()
    with pytest.raises(ConfigError):
        scan_dataset(tmp_path, "val")


def test_scan_empty_class_is_warning(tmp_path):
    make_tree(tmp_path, {"fire": 2})
    (tmp_path / "train" / "nofire").mkdir()
    m = scan_dataset(tmp_path, "train")
    assert len(m) == 2 and m.class_names == ["fire", "nofire"]
    assert len(m.warnings) == 1 and "nofire" in m.warnings[0]


def test_scan_sorted_and_stable(tmp_path):
    make_tree(tmp_path, {"fire": 5, "nofire": 5})
    m = scan_dataset(tmp_path, "train")
    paths = [p for p, _ in m.entries]
    assert paths == sorted(paths)
    assert scan_dataset(tmp_path, "train").entries == m.entries


def test_manifest_json_round_trip(tmp_path):
    make_tree(tmp_path, {"fire": 2, "nofire": 1})
    m = scan_dataset(tmp_path, "train")
    m.save(tmp_path / "m.json")
    assert DatasetManifest.load(tmp_path / "m.json") == m
    assert set(json.loads((tmp_path / "m.json").read_text())) >= {"split", "class_names", "entries"}


# --- decode -------------------------------------------------------------------

def test_decode_single_red_pixel():
    img = decode_image(png_bytes([[[255, 0, 0]]]))
    assert (img.height, img.width) == (1, 1)
    assert img.pixels.tolist() == [[[255, 0, 0]]]


def test_decode_grayscale_replicated():
    img = decode_image(png_bytes([[128]], mode="L"))
    assert img.pixels.tolist() == [[[128, 128, 128]]]


def test_decode_alpha_dropped():
    img = decode_image(png_bytes([[[1, 2, 3, 4]]], mode="RGBA"))
    assert img.pixels.tolist() == [[[1, 2, 3]]]


def test_decode_truncated_jpeg():
    buf = io.BytesIO()
    Image.fromarray(np.random.default_rng(0).integers(0, 255, (64, 64, 3), dtype=np.uint8)).save(
        buf, format="JPEG")
    data = buf.getvalue()
    with pytest.raises(DecodeError, match="broken.jpg"):
        decode_image(data[: len(data) // 2], "broken.jpg")


def test_decode_garbage():
    with pytest.raises(DecodeError):
        decode_image(b"not an image at all")


def test_decode_rejects_other_formats():
    buf = io.BytesIO()
    Image.new("RGB", (2, 2)).save(buf, format="BMP")
    with pytest.raises(DecodeError, match="unsupported"):
        decode_image(buf.getvalue())


# --- resize -------------------------------------------------------------------

def test_resize_checkerboard_2x2_to_4x4():
    board = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    src = np.repeat(board[:, :, None], 3, axis=2)
    got = resize_bilinear(ImageRGB.from_array(src), 4, 4).pixels[:, :, 0]
    oracle = brute_force_bilinear(src, 4, 4)[:, :, 0]
    np.testing.assert_array_equal(got, oracle)
    # frozen from the oracle above
    np.testing.assert_array_equal(got, [[0, 64, 191, 255],
                                        [64, 96, 159, 191],
                                        [191, 159, 96, 64],
                                        [255, 191, 64, 0]])


def test_resize_constant_image():
    src = np.full((100, 100, 3), (12, 200, 77), dtype=np.uint8)
    out = resize_bilinear(ImageRGB.from_array(src), 224, 224)
    assert out.pixels.shape == (224, 224, 3)
    assert (out.pixels == (12, 200, 77)).all()


def test_resize_identity_at_same_size():
    src = np.random.default_rng(3).integers(0, 256, (224, 224, 3), dtype=np.uint8)
    out = resize_bilinear(ImageRGB.from_array(src), 224, 224)
    np.testing.assert_array_equal(out.pixels, src)


@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(3))),
       st.integers(1, 8), st.integers(1, 8))
def test_resize_matches_oracle_and_stays_in_range(src, oh, ow):
    out = resize_bilinear(ImageRGB.from_array(src), oh, ow).pixels
    np.testing.assert_array_equal(out, brute_force_bilinear(src, oh, ow))
    assert out.min() >= src.min() and out.max() <= src.max()


# --- normalization --------------------------------------------------------------

def test_normalize_spot_values():
    assert abs(float(normalize(np.array([0.48627, 0.0, 0.0]))[0]) - 0.00555) < 1e-5
    assert abs(float(normalize(np.array([1.0, 0.0, 0.0]))[0]) - 2.24891) < 1e-5


def test_normalized_tensor_from_8bit_pixels():
    px = np.zeros((224, 224, 3), dtype=np.uint8)
    px[0, 0, 0] = 124
    px[0, 1, 0] = 255
    t = to_normalized_tensor(ImageRGB.from_array(px))
    assert t.shape == (3, 224, 224) and t.dtype == np.float32
    # 124/255 is 0.486275, not the rounded 0.48627, so the exact value is 0.0055655
    assert abs(float(t[0, 0, 0]) - (124 / 255 - 0.485) / 0.229) < 1e-6
    assert abs(float(t[0, 0, 1]) - 2.24891) < 1e-5
    assert abs(float(t[1, 0, 0]) - (0 - 0.456) / 0.224) < 1e-6


def test_identity_normalization_is_divide_by_255():
    px = np.random.default_rng(1).integers(0, 256, (224, 224, 3), dtype=np.uint8)
    t = to_normalized_tensor(ImageRGB.from_array(px), NormalizationSpec((0, 0, 0), (1, 1, 1)))
    np.testing.assert_array_equal(t, (px.astype(np.float32) / np.float32(255)).transpose(2, 0, 1))


def test_normalize_wrong_size():
    with pytest.raises(DimensionError):
        to_normalized_tensor(ImageRGB.from_array(np.zeros((10, 10, 3))))


def test_normalization_spec_rejects_nonpositive_std():
    with pytest.raises(ConfigError):
        NormalizationSpec((0, 0, 0), (1, 0, 1))


@given(hnp.arrays(np.uint8, (8, 8, 3)))
def test_normalize_round_trip(px):
    t = to_normalized_tensor(ImageRGB.from_array(px), IMAGENET, size=8)
    np.testing.assert_allclose(denormalize(t), px / 255.0, atol=1e-6)


# --- batching -----------------------------------------------------------------

def manifest_of(n, classes=("fire", "nofire")):
    return DatasetManifest("train", [(f"f{i:04d}.png", i % len(classes)) for i in range(n)], list(classes))


def test_batch_sizes_without_shuffle():
    order = epoch_order(5, shuffle=False, seed=0, epoch=0)
    assert [len(b) for b in index_batches(order, 2)] == [2, 2, 1]
    assert order == [0, 1, 2, 3, 4]


def test_reference_train_split_batches():
    # 1509 training images at batch 32
    sizes = [len(b) for b in index_batches(epoch_order(1509, True, 3, 0), 32)]
    assert len(sizes) == 48 and sizes[:-1] == [32] * 47 and sizes[-1] == 5


def test_shuffle_deterministic_and_epoch_dependent():
    assert epoch_order(100, True, 7, 0) == epoch_order(100, True, 7, 0)
    assert epoch_order(100, True, 7, 0) != epoch_order(100, True, 7, 1)
    assert epoch_order(100, True, 7, 1) == epoch_order(100, True, 7 ^ 1, 0)


@given(st.integers(1, 200), st.integers(1, 40), st.booleans(), st.integers(0, 2**32), st.integers(0, 9))
def test_epoch_coverage(n, bs, shuffle, seed, epoch):
    batches = index_batches(epoch_order(n, shuffle, seed, epoch), bs)
    flat = [i for b in batches for i in b]
    assert sorted(flat) == list(range(n))
    assert all(len(b) == bs for b in batches[:-1]) and 1 <= len(batches[-1]) <= bs


def test_batch_iter_real_files(small_dataset):
    m = scan_dataset(small_dataset, "train")
    batches = list(batch_iter(m, 5, shuffle=False, size=32))
    assert [len(b) for b in batches] == [5] * 6 + [2]
    assert [p for b in batches for p in b.paths] == [p for p, _ in m.entries]
    assert batches[0].images.shape == (5, 3, 32, 32) and batches[0].images.dtype == np.float32
    assert batches[0].labels.dtype == np.int64


def test_batch_iter_bit_identical_streams(small_dataset):
    m = scan_dataset(small_dataset, "train")
    a = list(batch_iter(m, 7, shuffle=True, seed=11, epoch=2, size=32, workers=4))
    b = list(batch_iter(m, 7, shuffle=True, seed=11, epoch=2, size=32, workers=1))
    assert [x.paths for x in a] == [x.paths for x in b]
    assert all(x.images.tobytes() == y.images.tobytes() for x, y in zip(a, b))
    assert sorted(p for x in a for p in x.paths) == sorted(p for p, _ in m.entries)


def test_batch_iter_resizes_to_model_size(tmp_path):
    write_png(tmp_path / "train" / "fire" / "a.png", size=50)
    m = scan_dataset(tmp_path, "train")
    (batch,) = batch_iter(m, 4, size=32)
    assert batch.images.shape == (1, 3, 32, 32)


def test_batch_iter_corrupt_policy(tmp_path):
    write_png(tmp_path / "train" / "fire" / "good.png")
    (tmp_path / "train" / "fire" / "bad.png").write_bytes(b"\x89PNG broken")
    m = scan_dataset(tmp_path, "train")
    (batch,) = batch_iter(m, 4, size=4, on_error="skip")
    assert len(batch) == 1 and batch.paths[0].endswith("good.png")
    with pytest.raises(DecodeError, match="bad.png"):
        list(batch_iter(m, 4, size=4, on_error="raise"))


def test_batch_iter_rejects_bad_batch_size():
    with pytest.raises(ConfigError):
        list(batch_iter(manifest_of(3), 0))
