import math

import numpy as np

# Conventions here:
#   np.array:
#       shape -- (height, width, channels), like PIL
#       range -- [0-255]
#       dtype -- uint8
#   saakit datasets:
#       shape -- (channels, height, width), use to_hwc() first


def to_hwc(image: np.ndarray) -> np.ndarray:
    """
    (C, H, W) dataset image to an (H, W, 3) array, grayscale replicated to RGB.
    """
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ValueError('Expected (channels, height, width) with 1 or 3 channels, got %s' % (image.shape,))
    hwc = image.transpose(1, 2, 0)
    if hwc.shape[2] == 1:
        hwc = np.repeat(hwc, 3, axis=2)
    return np.ascontiguousarray(hwc, dtype=np.uint8)


def upscale(image, ratio):
    """
    return upscaled image array (nearest neighbour)
    Arguments:
    image -- a (H,W,C) numpy.ndarray
    ratio -- scaling factor (>=1)
    """
    if not isinstance(image, np.ndarray):
        raise ValueError('Expected ndarray')
    if ratio < 1:
        raise ValueError('Ratio must be at least 1 (ratio=%f)' % ratio)
    height = int(math.floor(image.shape[0] * ratio))
    width = int(math.floor(image.shape[1] * ratio))
    rows = np.floor(np.arange(height) / ratio).astype(np.int64)
    cols = np.floor(np.arange(width) / ratio).astype(np.int64)
    return image[rows][:, cols]


def tile_grid(images, columns=None, padsize=1):
    """
    Lays out images in a grid, row-major, with white padding between tiles.
    Returns a (H, W, 3) uint8 np.array
    Arguments:
    images -- an array of shape (N, H, W, 3)
    Keyword arguments:
    columns -- tiles per row, approx sqrt(N) if not set
    padsize -- how many pixels go inbetween the tiles
    """
    assert images.ndim == 4, 'images.ndim must be 4'
    images = images.astype('uint8')
    length = images.shape[0]

    if columns is None:
        n = int(np.ceil(np.sqrt(length)))
        nx = n - 1 if n * (n - 1) >= length else n
    else:
        nx = columns
    ny = int(np.ceil(length / nx))

    padding = ((0, nx * ny - length), (0, padsize), (0, padsize), (0, 0))
    padded = np.pad(images, padding, mode='constant', constant_values=255)

    # Tile the images beside each other
    tiles = padded.reshape((ny, nx) + padded.shape[1:]).transpose((0, 2, 1, 3, 4))
    return tiles.reshape((ny * tiles.shape[1], nx * tiles.shape[3], tiles.shape[4]))
