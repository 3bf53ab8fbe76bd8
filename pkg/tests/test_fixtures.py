import numpy as np
import pytest

from anytimecv import fixtures
from anytimecv.data import load_dataset
from anytimecv.errors import ConfigError


def test_shapes_are_reproducible():
    a = fixtures.make_shapes(30, seed=4)
    b = fixtures.make_shapes(30, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a[0], b[0]))
    assert np.array_equal(a[1], b[1])


@pytest.mark.parametrize("task", sorted(fixtures.TASKS))
def test_tasks_shapes_and_labels(task):
    imgs, labels = fixtures.make_shapes(40, seed=1, size=12, task=task)
    channels = fixtures.TASKS[task][2]
    assert all(im.shape == (12, 12, channels) and im.dtype == np.uint8 for im in imgs)
    assert labels.shape == (40, 4) and np.all(labels.sum(axis=1) == 1)


def test_banded_brightness_encodes_label():
    imgs, labels = fixtures.make_shapes(200, seed=2, size=16)
    cls = labels.argmax(axis=1)
    top = np.array([np.percentile(im, 95) for im in imgs])
    assert top[cls % 2 == 1].mean() > top[cls % 2 == 0].mean() + 40


def test_bad_task():
    with pytest.raises(ConfigError):
        fixtures.make_shapes(1, seed=0, task="blobs")
    with pytest.raises(ConfigError):
        fixtures.make_shapes(1, seed=0, size=4)


def test_write_fixture(tmp_path):
    sums = fixtures.write_fixture(tmp_path, n_train=20, n_test=8, seed=1, size=10)
    tr, te = load_dataset(tmp_path / "train"), load_dataset(tmp_path / "test")
    assert (len(tr), len(te)) == (20, 8)
    assert (tmp_path / "test" / "checksum.txt").read_text().strip() == sums["test"]
