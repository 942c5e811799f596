"""
Datasets: CIFAR-10 binary batches, MNIST IDX files and a synthetic grating generator, plus the
labeled/unlabeled split.

Every loader validates sizes before building arrays, a malformed file raises DatasetError and
never yields a partial Dataset.
"""
import os
import struct
from typing import List, Optional, Tuple

import numpy as np

from saakit.errors import DatasetError
from saakit.model import Dataset, DatasetConfig, SplitSpec

CIFAR_SIDE = 32
CIFAR_RECORD = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE
CIFAR_CLASSES = 10
CIFAR_TRAIN_FILES = ['data_batch_%d.bin' % i for i in range(1, 6)]
CIFAR_TEST_FILES = ['test_batch.bin']

MNIST_IMAGES_MAGIC = 0x00000803
MNIST_LABELS_MAGIC = 0x00000801

SYNTHETIC_MAX_CLASSES = 16


def _read(path: str) -> bytes:
    if not os.path.isfile(path):
        raise DatasetError(f'{path}: file not found')
    with open(path, 'rb') as h:
        return h.read()


def _cifar_records(path: str) -> Tuple[np.ndarray, np.ndarray]:
    raw = _read(path)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise DatasetError(f'{path}: size {len(raw)} is not a multiple of the {CIFAR_RECORD} byte record size')

    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if len(bad):
        raise DatasetError(f'{path}: record {bad[0]} has label byte {labels[bad[0]]} >= {CIFAR_CLASSES}')

    images = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).copy()
    return images, labels


def load_cifar10_binary(path: str, split: str = 'train') -> Dataset:
    """
    :param path: a single `.bin` batch file, or the `cifar-10-batches-bin` directory, in which case
        the five training batches (split='train') or the test batch (split='test') are read.
    """
    if os.path.isdir(path):
        names = CIFAR_TRAIN_FILES if split == 'train' else CIFAR_TEST_FILES
        files = [os.path.join(path, name) for name in names]
    else:
        files = [path]

    parts = [_cifar_records(f) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return Dataset(images, labels, CIFAR_CLASSES, split)


def write_cifar10_binary(path: str, dataset: Dataset):
    if dataset.images.shape[1:] != (3, CIFAR_SIDE, CIFAR_SIDE) or dataset.labels is None:
        raise DatasetError('cifar10 binary needs labeled 3x32x32 images')

    records = np.empty((dataset.size, CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = dataset.labels
    records[:, 1:] = dataset.images.reshape(dataset.size, -1)
    with open(path, 'wb') as h:
        h.write(records.tobytes())


def _fit_side(images: np.ndarray, side: int) -> np.ndarray:
    """
    Centre-pads with zeros or centre-crops (N, 1, H, W) images to side x side.
    """
    h = images.shape[2]
    if h == side:
        return images
    if h < side:
        before = (side - h) // 2
        after = side - h - before
        return np.pad(images, ((0, 0), (0, 0), (before, after), (before, after)))
    start = (h - side) // 2
    return images[:, :, start:start + side, start:start + side].copy()


def load_mnist_idx(path: str, labels_path: Optional[str] = None, side: int = 28, split: str = 'train') -> Dataset:
    """
    Reads an IDX image file (magic 0x803) and optionally its IDX label file (magic 0x801).
    """
    raw = _read(path)
    if len(raw) < 16:
        raise DatasetError(f'{path}: too short for an IDX image header')
    magic, count, rows, cols = struct.unpack('>IIII', raw[:16])
    if magic != MNIST_IMAGES_MAGIC:
        raise DatasetError(f'{path}: bad magic 0x{magic:08x}, expected 0x{MNIST_IMAGES_MAGIC:08x}')
    if rows != cols:
        raise DatasetError(f'{path}: only square images are supported, got {rows}x{cols}')
    if len(raw) != 16 + count * rows * cols:
        raise DatasetError(f'{path}: length {len(raw)} does not match {count} images of {rows}x{cols}')

    labels = None
    if labels_path is not None:
        raw_labels = _read(labels_path)
        if len(raw_labels) < 8:
            raise DatasetError(f'{labels_path}: too short for an IDX label header')
        magic, label_count = struct.unpack('>II', raw_labels[:8])
        if magic != MNIST_LABELS_MAGIC:
            raise DatasetError(f'{labels_path}: bad magic 0x{magic:08x}, expected 0x{MNIST_LABELS_MAGIC:08x}')
        if label_count != count or len(raw_labels) != 8 + label_count:
            raise DatasetError(f'{labels_path}: {label_count} labels for {count} images')
        labels = np.frombuffer(raw_labels, dtype=np.uint8, offset=8).astype(np.int64)
        if labels.max(initial=0) >= 10:
            raise DatasetError(f'{labels_path}: label {labels.max()} >= 10')

    images = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols)
    return Dataset(_fit_side(images, side).copy(), labels, 10, split)


def write_mnist_idx(path: str, images: np.ndarray, labels_path: Optional[str] = None,
                    labels: Optional[np.ndarray] = None):
    count, _, rows, cols = images.shape
    with open(path, 'wb') as h:
        h.write(struct.pack('>IIII', MNIST_IMAGES_MAGIC, count, rows, cols))
        h.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())

    if labels_path is not None:
        with open(labels_path, 'wb') as h:
            h.write(struct.pack('>II', MNIST_LABELS_MAGIC, len(labels)))
            h.write(np.asarray(labels, dtype=np.uint8).tobytes())


def class_templates(classes: int, side: int, channels: int = 3) -> np.ndarray:
    """
    One grating per class. Orientation alternates between vertical and horizontal stripes and the
    frequency grows every two classes, so horizontal flips map each template onto itself.
    """
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing='ij')
    templates = np.empty((classes, channels, side, side), dtype=np.float64)
    for k in range(classes):
        cycles = 1 + k // 2
        coord = xx if k % 2 == 0 else yy
        wave = np.cos(2 * np.pi * cycles * (coord + 0.5) / side)
        templates[k] = 127.5 + 100.0 * wave

    return templates


def gen_synthetic(seed: int, classes: int, n_train: int, n_test: int, side: int, noise: float = 25.0,
                  channels: int = 3) -> Tuple[Dataset, Dataset]:
    """
    Class-k images are template k plus uniform pixel noise in [-noise, noise]. Labels cycle through
    the classes, so both splits are balanced.

    :return: (train, test)
    """
    if not 1 <= classes <= SYNTHETIC_MAX_CLASSES:
        raise DatasetError(f'synthetic datasets support 1..{SYNTHETIC_MAX_CLASSES} classes, got {classes}')
    if n_train < 1 or n_test < 1 or side < 2 or side % 2:
        raise DatasetError(f'invalid synthetic sizes n_train={n_train} n_test={n_test} side={side}')

    templates = class_templates(classes, side, channels)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))

    def make(n: int, split: str) -> Dataset:
        labels = np.arange(n, dtype=np.int64) % classes
        labels = labels[rng.permutation(n)]
        noise_values = rng.uniform(-noise, noise, size=(n, channels, side, side)) if noise else 0.0
        images = np.clip(np.rint(templates[labels] + noise_values), 0, 255).astype(np.uint8)
        return Dataset(images, labels, classes, split)

    return make(n_train, 'train'), make(n_test, 'test')


def split_labels(dataset: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, np.ndarray]:
    """
    Picks exactly labels_per_class images per class by seeded shuffle. The unlabeled set is the
    whole training set with labels hidden, labeled images included.

    :return: (labeled subset, unlabeled set, indices of the labeled subset in dataset)
    """
    if dataset.labels is None:
        raise DatasetError('cannot split an unlabeled dataset')

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5B17]))
    chosen: List[np.ndarray] = []
    for k in range(dataset.classes):
        members = np.flatnonzero(dataset.labels == k)
        if len(members) < spec.labels_per_class:
            raise DatasetError(f'class {k} has {len(members)} images, need {spec.labels_per_class} labels per class')
        chosen.append(rng.permutation(members)[:spec.labels_per_class])

    indices = np.sort(np.concatenate(chosen))
    labeled = Dataset(dataset.images[indices], dataset.labels[indices], dataset.classes, dataset.split)
    unlabeled = Dataset(dataset.images, None, dataset.classes, dataset.split)
    return labeled, unlabeled, indices


def load_dataset(config: DatasetConfig, seed: int) -> Tuple[Dataset, Dataset]:
    """
    :return: (train, test) for the configured dataset kind
    """
    if config.kind == 'synthetic':
        return gen_synthetic(seed, config.classes, config.n_train, config.n_test, config.side, config.noise,
                             config.channels)

    if config.kind == 'cifar10':
        train = load_cifar10_binary(config.path, 'train')
        test = load_cifar10_binary(config.path, 'test')
        if config.side != CIFAR_SIDE:
            raise DatasetError(f'cifar10 images are {CIFAR_SIDE}x{CIFAR_SIDE}, set dataset.side={CIFAR_SIDE}')
        return train, test

    if config.kind == 'mnist':
        def part(prefix: str, split: str) -> Dataset:
            return load_mnist_idx(os.path.join(config.path, prefix + '-images-idx3-ubyte'),
                                  os.path.join(config.path, prefix + '-labels-idx1-ubyte'), config.side, split)

        return part('train', 'train'), part('t10k', 'test')

    raise DatasetError(f'unknown dataset kind {config.kind!r}')
