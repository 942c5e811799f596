import numpy as np
import PIL.Image


def array_to_img(x: np.ndarray) -> PIL.Image.Image:
    """
    x should be shape (channels, height, width) with uint8 values
    """
    if x.ndim != 3:
        raise ValueError('Unsupported shape : ' + str(x.shape) + '. Need (channels, height, width)')
    if x.dtype != np.uint8:
        x = np.clip(x, 0, 255).astype(np.uint8)
    if x.shape[0] == 3:
        # RGB
        return PIL.Image.fromarray(np.ascontiguousarray(x.transpose(1, 2, 0)), 'RGB')
    elif x.shape[0] == 1:
        # grayscale
        return PIL.Image.fromarray(np.ascontiguousarray(x[0]), 'L')
    else:
        raise ValueError('Unsupported channel number: ' + str(x.shape[0]))


def img_to_array(im: PIL.Image.Image) -> np.ndarray:
    """
    Inverse of array_to_img, returns a (channels, height, width) uint8 array.
    """
    a = np.asarray(im, dtype=np.uint8)
    if a.ndim == 2:
        return a[np.newaxis].copy()
    return a.transpose(2, 0, 1).copy()


def set_parameter_by_path(dictionary: dict, path: str, value):
    current = dictionary
    items = path.split('.')
    for item in items[:-1]:
        if not isinstance(current.get(item), dict):
            current[item] = {}
        current = current[item]

    current[items[-1]] = value


def flatten_parameters(dictionary: dict, prefix: str = '') -> dict:
    flat = {}
    for k, v in dictionary.items():
        path = prefix + k
        if isinstance(v, dict):
            flat.update(flatten_parameters(v, path + '.'))
        else:
            flat[path] = v

    return flat
