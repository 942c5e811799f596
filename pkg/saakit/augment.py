"""
Seeded augmentation pipelines over uint8 images of shape (channels, height, width):

  weak_augment              flip + reflected shift, the pseudo-label view
  strong_augment            n random ops from the strong op set, then cutout
  diverse_augment           two independent strong views regrouped into one image
  patchwise_diverse_augment cut first, then strong-augment each half

Every function takes an explicit numpy Generator, nothing reads global random state.
"""
import enum
from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import PIL.Image
import PIL.ImageEnhance
import PIL.ImageOps

from saakit.errors import ConfigError, ShapeError
from saakit.model import AugmentConfig, STRONG_OPS
from saakit.utils import array_to_img, img_to_array

CUTOUT_FILL = 127
MAX_ROTATE = 30.0
MAX_SHEAR = 0.3
MAX_TRANSLATE = 0.3
MAX_ENHANCE = 0.9


class Orientation(enum.Enum):
    TopBottom = 'top-bottom'
    LeftRight = 'left-right'


class AugSpec(NamedTuple):
    op: str
    magnitude: float
    sign: int = 1


def check_image(img: np.ndarray):
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ShapeError(f'image must be (channels, height, width) with 1 or 3 channels, got {img.shape}')
    if img.shape[1] == 0 or img.shape[2] == 0 or img.shape[1] % 2 or img.shape[2] % 2:
        raise ShapeError(f'image extents must be even and nonzero, got {img.shape[1:]}')


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """
    Mirror indices into [0, n) without repeating the edge pixel: ... 2 1 | 0 1 2 ... n-1 | n-2 ...
    """
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx > n - 1, period - idx, idx)


def _remap(img: np.ndarray, src_y: np.ndarray, src_x: np.ndarray) -> np.ndarray:
    h, w = img.shape[1:]
    yy = reflect_index(np.floor(src_y + 0.5).astype(np.int64), h)
    xx = reflect_index(np.floor(src_x + 0.5).astype(np.int64), w)
    return img[:, yy, xx]


def _affine(img: np.ndarray, inverse: np.ndarray) -> np.ndarray:
    """
    Nearest-neighbour resampling; `inverse` maps output (y, x) offsets from the image centre to
    source offsets.
    """
    h, w = img.shape[1:]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) - cy, np.arange(w, dtype=np.float64) - cx, indexing='ij')
    src_y = inverse[0, 0] * yy + inverse[0, 1] * xx + cy
    src_x = inverse[1, 0] * yy + inverse[1, 1] * xx + cx
    return _remap(img, src_y, src_x)


def translate(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """
    Moves content by (dy, dx) pixels, out[y, x] = img[y - dy, x - dx] with reflection at the borders.
    """
    h, w = img.shape[1:]
    yy = reflect_index(np.arange(h) - dy, h)
    xx = reflect_index(np.arange(w) - dx, w)
    return img[:, yy[:, np.newaxis], xx[np.newaxis, :]]


def flip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1].copy()


def weak_augment(img: np.ndarray, rng: np.random.Generator, flip_prob: float = 0.5,
                 max_shift: float = 0.125) -> np.ndarray:
    """
    Horizontal flip with probability flip_prob, then a random shift of up to max_shift of each side.
    """
    out = img
    if rng.random() < flip_prob:
        out = flip(out)

    h, w = img.shape[1:]
    sy, sx = int(round(max_shift * h)), int(round(max_shift * w))
    dy = int(rng.integers(-sy, sy + 1)) if sy else 0
    dx = int(rng.integers(-sx, sx + 1)) if sx else 0
    if dy or dx:
        out = translate(out, dy, dx)

    return out if out is not img else img.copy()


def _enhance(enhancer) -> Callable[[np.ndarray, AugSpec], np.ndarray]:
    def apply(img: np.ndarray, spec: AugSpec) -> np.ndarray:
        factor = 1.0 + spec.sign * MAX_ENHANCE * spec.magnitude
        if factor == 1.0:
            return img.copy()
        return img_to_array(enhancer(array_to_img(img)).enhance(factor))

    return apply


def _identity(img, spec):
    return img.copy()


def _autocontrast(img, spec):
    return img_to_array(PIL.ImageOps.autocontrast(array_to_img(img)))


def _equalize(img, spec):
    return img_to_array(PIL.ImageOps.equalize(array_to_img(img)))


def _solarize(img, spec):
    # magnitude 1 inverts every pixel, magnitude 0 none
    threshold = int(round(256 * (1.0 - spec.magnitude)))
    return np.where(img >= threshold, 255 - img, img).astype(np.uint8)


def _posterize(img, spec):
    bits = 8 - int(round(7 * spec.magnitude))
    if bits >= 8:
        return img.copy()
    return img_to_array(PIL.ImageOps.posterize(array_to_img(img), bits))


def _rotate(img, spec):
    angle = np.deg2rad(spec.sign * MAX_ROTATE * spec.magnitude)
    if angle == 0:
        return img.copy()
    c, s = np.cos(angle), np.sin(angle)
    return _affine(img, np.array([[c, -s], [s, c]]))


def _shear_x(img, spec):
    shear = spec.sign * MAX_SHEAR * spec.magnitude
    return _affine(img, np.array([[1.0, 0.0], [shear, 1.0]]))


def _shear_y(img, spec):
    shear = spec.sign * MAX_SHEAR * spec.magnitude
    return _affine(img, np.array([[1.0, shear], [0.0, 1.0]]))


def _translate_x(img, spec):
    return translate(img, 0, int(round(spec.sign * MAX_TRANSLATE * spec.magnitude * img.shape[2])))


def _translate_y(img, spec):
    return translate(img, int(round(spec.sign * MAX_TRANSLATE * spec.magnitude * img.shape[1])), 0)


TRANSFORMS: Dict[str, Callable[[np.ndarray, AugSpec], np.ndarray]] = {
    'identity': _identity,
    'autocontrast': _autocontrast,
    'equalize': _equalize,
    'rotate': _rotate,
    'solarize': _solarize,
    'posterize': _posterize,
    'brightness': _enhance(PIL.ImageEnhance.Brightness),
    'contrast': _enhance(PIL.ImageEnhance.Contrast),
    'sharpness': _enhance(PIL.ImageEnhance.Sharpness),
    'shear_x': _shear_x,
    'shear_y': _shear_y,
    'translate_x': _translate_x,
    'translate_y': _translate_y,
}

assert tuple(TRANSFORMS.keys()) == STRONG_OPS


def apply_transform(spec: AugSpec, img: np.ndarray) -> np.ndarray:
    """
    Magnitude 0 is neutral for every op but autocontrast and equalize, which have no magnitude.

      rotate         sign * 30 degrees * m
      solarize       invert pixels >= round(256 * (1 - m))
      posterize      keep 8 - round(7 * m) bits
      brightness,
      contrast,
      sharpness      enhancement factor 1 + sign * 0.9 * m
      shear_x/y      sign * 0.3 * m
      translate_x/y  sign * 0.3 * m of the side, in whole pixels
    """
    transform = TRANSFORMS.get(spec.op)
    if transform is None:
        raise ConfigError(f'unknown augmentation op {spec.op!r}, known: {", ".join(STRONG_OPS)}')
    if not 0.0 <= spec.magnitude <= 1.0:
        raise ConfigError(f'magnitude {spec.magnitude} of {spec.op} must be in [0, 1]')

    out = transform(img, spec)
    return np.clip(out, 0, 255).astype(np.uint8, copy=False)


def sample_specs(rng: np.random.Generator, ops: Sequence[str], n: int) -> Tuple[AugSpec, ...]:
    specs = []
    for _ in range(n):
        op = ops[int(rng.integers(len(ops)))]
        magnitude = float(rng.random())
        sign = 1 if rng.random() < 0.5 else -1
        specs.append(AugSpec(op, magnitude, sign))

    return tuple(specs)


def cutout_at(img: np.ndarray, cy: int, cx: int, side: int, fill: int = CUTOUT_FILL) -> np.ndarray:
    h, w = img.shape[1:]
    y0, x0 = cy - side // 2, cx - side // 2
    out = img.copy()
    out[:, max(0, y0):min(h, y0 + side), max(0, x0):min(w, x0 + side)] = fill
    return out


def cutout(img: np.ndarray, rng: np.random.Generator, fraction: float = 0.5) -> np.ndarray:
    """
    Square gray patch with side fraction * min(H, W), centred at a uniform random pixel and
    clipped to the image.
    """
    h, w = img.shape[1:]
    side = int(fraction * min(h, w))
    cy = int(rng.integers(h))
    cx = int(rng.integers(w))
    return cutout_at(img, cy, cx, side)


def strong_augment(img: np.ndarray, rng: np.random.Generator, config: AugmentConfig = AugmentConfig()) -> np.ndarray:
    out = img
    for spec in sample_specs(rng, config.ops, config.n):
        out = apply_transform(spec, out)
    if config.cutout:
        out = cutout(out, rng, config.cutout_fraction)

    return out if out is not img else img.copy()


def regroup(a: np.ndarray, b: np.ndarray, orientation: Orientation) -> np.ndarray:
    """
    TopBottom takes rows [0, H/2) from a and the rest from b, LeftRight does the same with columns.
    """
    if a.shape != b.shape:
        raise ShapeError(f'cannot regroup images of shapes {a.shape} and {b.shape}')
    h, w = a.shape[1:]
    if h % 2 or w % 2:
        raise ShapeError(f'regroup needs even extents, got {a.shape[1:]}')

    out = b.copy()
    if orientation is Orientation.TopBottom:
        out[:, :h // 2] = a[:, :h // 2]
    else:
        out[:, :, :w // 2] = a[:, :, :w // 2]

    return out


def sample_orientation(rng: np.random.Generator) -> Orientation:
    return Orientation.TopBottom if rng.random() < 0.5 else Orientation.LeftRight


def diverse_augment(img: np.ndarray, rng: np.random.Generator, config: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """
    Strong-augments the whole image twice, with independent draws, and regroups the two views.
    """
    check_image(img)
    first = strong_augment(img, rng, config)
    second = strong_augment(img, rng, config)
    return regroup(first, second, sample_orientation(rng))


def patchwise_diverse_augment(img: np.ndarray, rng: np.random.Generator,
                              config: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """
    Cut first, augment after: each half is strong-augmented on its own and the halves are
    concatenated back in place.
    """
    check_image(img)
    orientation = sample_orientation(rng)
    h, w = img.shape[1:]
    if orientation is Orientation.TopBottom:
        first, second = img[:, :h // 2], img[:, h // 2:]
        axis = 1
    else:
        first, second = img[:, :, :w // 2], img[:, :, w // 2:]
        axis = 2

    return np.concatenate([strong_augment(first, rng, config), strong_augment(second, rng, config)], axis=axis)


def augment_view(kind: str, img: np.ndarray, rng: np.random.Generator, config: AugmentConfig) -> np.ndarray:
    """
    :param kind: 'weak', 'strong' or 'diverse'. 'diverse' honours config.patchwise.
    """
    if kind == 'weak':
        return weak_augment(img, rng, config.flip_prob, config.max_shift)
    if kind == 'strong':
        return strong_augment(img, rng, config)
    if kind == 'diverse':
        if config.patchwise:
            return patchwise_diverse_augment(img, rng, config)
        return diverse_augment(img, rng, config)

    raise ConfigError(f'unknown augmentation kind {kind!r}')
