import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anytimecv import fixtures
from anytimecv.data import (
    ChannelPolicy,
    DatasetMeta,
    LabeledDataset,
    PreprocessCache,
    dataset_checksum,
    finalize,
    infer_meta,
    load_dataset,
    load_images,
    load_labels,
    preprocess,
    resize_to_target,
    split_train_valid,
    target_input_shape,
    write_dataset,
)
from anytimecv.errors import ConfigError, FormatError, IntegrityError, LoadError


def _ds_of_shapes(shapes, k=2):
    imgs = [np.zeros(s) for s in shapes]
    labels = np.eye(k, dtype=np.uint8)[np.arange(len(shapes)) % k]
    return LabeledDataset(tuple(imgs), labels)


def _meta(shape, c=3):
    return DatasetMeta(2, 1, shape, c, False)


def test_load_grayscale_readback(tmp_path):
    rng = np.random.default_rng(0)
    imgs = [rng.integers(0, 256, (28, 28, 1), dtype=np.uint8) for _ in range(3)]
    labels = np.eye(10, dtype=np.uint8)[[0, 4, 9]]
    write_dataset(tmp_path / "d", imgs, labels, name="gray")
    ds = load_dataset(tmp_path / "d")
    assert len(ds) == 3 and ds.num_classes == 10
    assert infer_meta(ds).channel_count == 1
    np.testing.assert_array_equal(np.rint(ds.images[1] * 255).astype(np.uint8), imgs[1])
    np.testing.assert_array_equal(ds.labels, labels)


def test_empty_dataset_is_integrity_error(tmp_path):
    write_dataset(tmp_path / "e", [], np.zeros((0, 3), dtype=np.uint8))
    with pytest.raises(IntegrityError):
        load_dataset(tmp_path / "e")


def test_missing_manifest(tmp_path):
    (tmp_path / "images").mkdir()
    with pytest.raises(LoadError):
        load_dataset(tmp_path)


def test_label_mismatch(tmp_path):
    imgs = [np.zeros((4, 4, 3), dtype=np.uint8)] * 2
    write_dataset(tmp_path / "d", imgs, np.eye(2, dtype=np.uint8))
    lines = (tmp_path / "d" / "labels.csv").read_text().splitlines()
    (tmp_path / "d" / "labels.csv").write_text("\n".join(lines[:2]) + "\n")
    with pytest.raises(IntegrityError):
        load_dataset(tmp_path / "d")


def test_fixture_checksum(tmp_path):
    imgs, labels = fixtures.make_shapes(100, seed=5, size=16)
    recorded = write_dataset(tmp_path / "f", imgs, labels)
    assert (tmp_path / "f" / "checksum.txt").read_text().strip() == recorded
    ds = load_dataset(tmp_path / "f")
    assert dataset_checksum(ds.images, ds.labels, ds.ids) == recorded


def test_load_images_never_reads_labels(tmp_path):
    write_dataset(tmp_path / "d", [np.zeros((3, 3, 3), np.uint8)], np.eye(1, dtype=np.uint8))
    (tmp_path / "d" / "labels.csv").unlink()
    meta, names, images = load_images(tmp_path / "d")
    assert names == ["img_000000.png"] and len(images) == 1
    with pytest.raises(LoadError):
        load_labels(tmp_path / "d")


@pytest.mark.parametrize("shapes, median", [
    ([(28, 28, 3), (32, 32, 3), (100, 50, 3)], (32, 32)),
    ([(600, 450, 3)] * 4, (600, 450)),
    ([(7, 9, 1)], (7, 9)),
])
def test_infer_meta_median(shapes, median):
    meta = infer_meta(_ds_of_shapes(shapes))
    assert meta.median_shape == median
    assert meta.variable_shape == (len(set(shapes)) > 1)


def test_infer_meta_rejects_mixed_channels():
    with pytest.raises(IntegrityError):
        infer_meta(_ds_of_shapes([(4, 4, 1), (4, 4, 3)]))


def test_target_shapes():
    s = target_input_shape(_meta((28, 28), 1))
    assert s.target_shape == (28, 28)
    assert s.channel_policy is ChannelPolicy.REPLICATE_TO_THREE
    assert target_input_shape(_meta((600, 450))).target_shape == (64, 48)
    assert target_input_shape(_meta((64, 64))).target_shape == (64, 64)
    assert target_input_shape(_meta((8, 8), 4)).channel_policy is ChannelPolicy.PREFIX_PROJECTION


@settings(max_examples=200)
@given(st.integers(1, 2000), st.integers(1, 2000))
def test_target_never_exceeds_cap_or_upsamples(h, w):
    t = target_input_shape(_meta((h, w))).target_shape
    assert max(t) <= 64
    assert t[0] <= h and t[1] <= w


def test_preprocess_examples():
    spec = target_input_shape(_meta((5, 7)))
    assert np.all(preprocess(np.full((5, 7, 3), 0.5), spec) == 0.0)
    gray = target_input_shape(_meta((2, 2), 1))
    out = preprocess(np.array([[[0.1], [0.9]], [[0.4], [0.2]]]), gray)
    assert out.shape == (2, 2, 3)
    assert np.array_equal(out[..., 0], out[..., 1]) and np.array_equal(out[..., 1], out[..., 2])


def test_checkerboard_downsize():
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)[..., None]
    spec = target_input_shape(_meta((2, 2), 1))
    np.testing.assert_allclose(preprocess(board, spec), 0.0, atol=1e-12)


def test_preprocess_rejects_empty():
    spec = target_input_shape(_meta((2, 2)))
    with pytest.raises(FormatError):
        preprocess(np.zeros((0, 3, 3)), spec)


def test_cache_matches_recompute():
    spec = target_input_shape(_meta((6, 6)))
    img = np.random.default_rng(2).random((9, 9, 3))
    cache = PreprocessCache()
    a = cache.resized("x", img, spec)
    b = cache.resized("x", img, spec)
    assert a is b and cache.hits == 1 and cache.misses == 1
    np.testing.assert_array_equal(a, resize_to_target(img, spec))
    np.testing.assert_array_equal(finalize(a, spec), preprocess(img, spec))


def test_cache_eviction():
    cache = PreprocessCache(capacity_bytes=3 * 8 * 10)
    for i in range(5):
        cache.put(i, np.zeros(10))
    assert len(cache) == 3 and cache.get(0) is None and cache.get(4) is not None


def test_split_sizes_and_determinism():
    ds = _ds_of_shapes([(2, 2, 3)] * 100, k=4)
    tr, va = split_train_valid(ds, 0.2, seed=7)
    assert (len(tr), len(va)) == (80, 20)
    assert not set(tr.ids) & set(va.ids)
    tr2, va2 = split_train_valid(ds, 0.2, seed=7)
    assert va.ids == va2.ids and tr.ids == tr2.ids


def test_split_is_stratified():
    ds = _ds_of_shapes([(2, 2, 3)] * 100, k=10)
    _, va = split_train_valid(ds, 0.2, seed=1)
    assert va.labels.sum(axis=0).tolist() == [2] * 10


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 80), st.integers(0, 10**6), st.floats(0.05, 0.95))
def test_split_partitions(n, seed, frac):
    ds = _ds_of_shapes([(1, 1, 1)] * n, k=3)
    tr, va = split_train_valid(ds, frac, seed)
    assert sorted(tr.ids + va.ids) == sorted(ds.ids)
    assert len(set(tr.ids) & set(va.ids)) == 0


def test_split_bad_fraction():
    with pytest.raises(ConfigError):
        split_train_valid(_ds_of_shapes([(1, 1, 1)] * 4), 1.0, 0)


def test_dataset_is_immutable():
    ds = _ds_of_shapes([(2, 2, 3)] * 2)
    with pytest.raises(ValueError):
        ds.images[0][0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        ds.labels[0, 0] = 0


def test_manifest_written(tmp_path):
    write_dataset(tmp_path / "m", [np.zeros((2, 2, 3), np.uint8)], np.eye(1, dtype=np.uint8),
                  name="tiny")
    assert json.loads((tmp_path / "m" / "manifest.json").read_text()) == {
        "name": "tiny", "num_classes": 1}
