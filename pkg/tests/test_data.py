import os

import numpy as np
import pytest

from saakit.data import (class_templates, gen_synthetic, load_cifar10_binary, load_dataset, load_mnist_idx,
                         split_labels, write_cifar10_binary, write_mnist_idx)
from saakit.errors import DatasetError
from saakit.model import Dataset, DatasetConfig, SplitSpec


def test_synthetic_is_seeded_and_balanced():
    train, test = gen_synthetic(3, classes=4, n_train=40, n_test=20, side=8)
    again, _ = gen_synthetic(3, classes=4, n_train=40, n_test=20, side=8)
    other, _ = gen_synthetic(4, classes=4, n_train=40, n_test=20, side=8)

    assert train.images.shape == (40, 3, 8, 8)
    assert train.images.dtype == np.uint8
    assert test.size == 20 and test.split == 'test'
    assert np.array_equal(train.images, again.images)
    assert not np.array_equal(train.images, other.images)
    assert list(np.bincount(train.labels)) == [10, 10, 10, 10]
    assert list(np.bincount(test.labels)) == [5, 5, 5, 5]


def test_templates_survive_horizontal_flip():
    templates = class_templates(6, 16)
    np.testing.assert_allclose(templates[..., ::-1], templates, atol=1e-9)
    # distinct classes stay distinct
    for a in range(6):
        for b in range(a + 1, 6):
            assert np.abs(templates[a] - templates[b]).max() > 50


def test_synthetic_errors():
    with pytest.raises(DatasetError):
        gen_synthetic(0, classes=0, n_train=4, n_test=4, side=8)
    with pytest.raises(DatasetError):
        gen_synthetic(0, classes=2, n_train=4, n_test=4, side=7)


def test_split_labels():
    train, _ = gen_synthetic(0, classes=4, n_train=100, n_test=10, side=8)
    labeled, unlabeled, indices = split_labels(train, SplitSpec(3, seed=1))

    assert list(np.bincount(labeled.labels)) == [3, 3, 3, 3]
    assert np.array_equal(labeled.images, train.images[indices])
    assert np.array_equal(labeled.labels, train.labels[indices])
    assert unlabeled.size == train.size and unlabeled.labels is None

    _, _, again = split_labels(train, SplitSpec(3, seed=1))
    _, _, other = split_labels(train, SplitSpec(3, seed=2))
    assert np.array_equal(indices, again)
    assert not np.array_equal(indices, other)

    with pytest.raises(DatasetError):
        split_labels(train, SplitSpec(26))
    with pytest.raises(DatasetError):
        split_labels(unlabeled, SplitSpec(1))


def test_cifar_binary(tmp_path):
    rng = np.random.default_rng(0)
    dataset = Dataset(rng.integers(0, 256, size=(5, 3, 32, 32), dtype=np.uint8), np.array([0, 9, 3, 3, 1]), 10)
    path = str(tmp_path / 'test_batch.bin')
    write_cifar10_binary(path, dataset)
    assert os.path.getsize(path) == 5 * 3073

    loaded = load_cifar10_binary(path, 'test')
    assert np.array_equal(loaded.images, dataset.images)
    assert np.array_equal(loaded.labels, dataset.labels)
    assert load_cifar10_binary(str(tmp_path), 'test').size == 5


def test_cifar_binary_errors(tmp_path):
    truncated = tmp_path / 'short.bin'
    truncated.write_bytes(b'\x00' * 3000)
    with pytest.raises(DatasetError):
        load_cifar10_binary(str(truncated))

    bad_label = tmp_path / 'label.bin'
    bad_label.write_bytes(b'\x0a' + b'\x00' * 3072)
    with pytest.raises(DatasetError):
        load_cifar10_binary(str(bad_label))

    with pytest.raises(DatasetError):
        load_cifar10_binary(str(tmp_path / 'missing.bin'))


def test_mnist_idx(tmp_path):
    rng = np.random.default_rng(1)
    images = rng.integers(0, 256, size=(4, 1, 28, 28), dtype=np.uint8)
    labels = np.array([7, 0, 1, 9])
    images_path, labels_path = str(tmp_path / 'images'), str(tmp_path / 'labels')
    write_mnist_idx(images_path, images, labels_path, labels)

    loaded = load_mnist_idx(images_path, labels_path)
    assert np.array_equal(loaded.images, images)
    assert np.array_equal(loaded.labels, labels)

    padded = load_mnist_idx(images_path, labels_path, side=32)
    assert padded.images.shape == (4, 1, 32, 32)
    assert np.array_equal(padded.images[:, :, 2:30, 2:30], images)
    assert not padded.images[:, :, :2].any()


def test_mnist_idx_errors(tmp_path):
    path = tmp_path / 'images'
    path.write_bytes(b'\x00\x00\x08\x01' + b'\x00' * 12)
    with pytest.raises(DatasetError):
        load_mnist_idx(str(path))

    images = np.zeros((2, 1, 4, 4), dtype=np.uint8)
    write_mnist_idx(str(path), images)
    with open(str(path), 'ab') as h:
        h.write(b'\x00')
    with pytest.raises(DatasetError):
        load_mnist_idx(str(path), side=4)


def test_load_dataset():
    train, test = load_dataset(DatasetConfig(classes=3, n_train=30, n_test=9, side=8), seed=0)
    assert train.classes == 3 and train.size == 30 and test.size == 9

    with pytest.raises(DatasetError):
        load_dataset(DatasetConfig(kind='imagenet'), seed=0)
    with pytest.raises(DatasetError):
        load_dataset(DatasetConfig(kind='cifar10', path='/nonexistent/cifar'), seed=0)
