"""
Reference classifier, written directly against numpy:

    conv3x3(conv1) -> relu -> maxpool2 -> conv3x3(conv2) -> relu -> maxpool2 -> flatten
        -> dense(hidden) -> relu -> dense(classes)

Inputs are uint8 images (N, C, H, W), scaled per example to [0, 1]. Convolutions use zero
'same' padding, so the spatial side shrinks only in the two poolings.
"""
import hashlib
from collections import OrderedDict
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import simplejson

from saakit.errors import ShapeError, TrainingAbort
from saakit.model import ArchConfig

PROB_CLAMP = 1e-7


class ClassifierParams:
    """
    Ordered, named parameter tensors plus a version tag that is bumped by every optimizer step.
    """

    def __init__(self, tensors: 'OrderedDict[str, np.ndarray]', version: int = 0):
        self.tensors = OrderedDict(tensors)
        self.version = version

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self):
        return len(self.tensors)

    @property
    def names(self) -> List[str]:
        return list(self.tensors.keys())

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> 'ClassifierParams':
        return ClassifierParams(OrderedDict((k, v.copy()) for k, v in self.tensors.items()), self.version)

    def astype(self, dtype) -> 'ClassifierParams':
        return ClassifierParams(OrderedDict((k, v.astype(dtype)) for k, v in self.tensors.items()), self.version)

    def zeros_like(self) -> 'ClassifierParams':
        return ClassifierParams(OrderedDict((k, np.zeros_like(v)) for k, v in self.tensors.items()), 0)

    def equals(self, other: 'ClassifierParams') -> bool:
        return self.names == other.names and all(np.array_equal(self[k], other[k]) for k in self.names)


class LossSpec(NamedTuple):
    """
    loss = sum_i weights[i] * H(targets[i], softmax(logits[i])), targets are rows of class
    probabilities (one-hot for hard labels).
    """
    targets: np.ndarray
    weights: np.ndarray


def param_shapes(arch: ArchConfig) -> 'OrderedDict[str, Tuple[int, ...]]':
    flat = arch.conv2 * (arch.side // 4) * (arch.side // 4)
    return OrderedDict([
        ('conv1.weight', (arch.conv1, arch.channels, 3, 3)),
        ('conv1.bias', (arch.conv1,)),
        ('conv2.weight', (arch.conv2, arch.conv1, 3, 3)),
        ('conv2.bias', (arch.conv2,)),
        ('fc1.weight', (arch.hidden, flat)),
        ('fc1.bias', (arch.hidden,)),
        ('fc2.weight', (arch.classes, arch.hidden)),
        ('fc2.bias', (arch.classes,)),
    ])


def init_params(arch: ArchConfig, rng: np.random.Generator, dtype='float32') -> ClassifierParams:
    """
    Kaiming-uniform (fan-in) weights, zero biases.
    """
    tensors = OrderedDict()
    for name, shape in param_shapes(arch).items():
        if name.endswith('.bias'):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)

    return ClassifierParams(tensors)


def zeros_params(arch: ArchConfig, dtype='float32') -> ClassifierParams:
    return ClassifierParams(OrderedDict((k, np.zeros(s, dtype=dtype)) for k, s in param_shapes(arch).items()))


def check_params(params: ClassifierParams, arch: ArchConfig):
    expected = param_shapes(arch)
    if params.names != list(expected.keys()):
        raise ShapeError(f'parameter names {params.names} do not match architecture {list(expected.keys())}')
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f'{name} has shape {params[name].shape}, architecture needs {shape}')


def arch_hash(arch: ArchConfig) -> bytes:
    return hashlib.sha256(simplejson.dumps(arch._asdict(), sort_keys=True).encode('utf8')).digest()


def model_graph(arch: ArchConfig) -> dict:
    """
    Layer list with output shapes and parameter counts, stored in the run manifest.
    """
    s = arch.side
    shapes = param_shapes(arch)

    def count(prefix):
        return int(sum(np.prod(v) for k, v in shapes.items() if k.startswith(prefix + '.')))

    nodes = [
        {'id': 'input', 'type': 'Input', 'shape': [arch.channels, s, s], 'params': 0},
        {'id': 'conv1', 'type': 'Conv3x3', 'shape': [arch.conv1, s, s], 'params': count('conv1')},
        {'id': 'pool1', 'type': 'MaxPool2', 'shape': [arch.conv1, s // 2, s // 2], 'params': 0},
        {'id': 'conv2', 'type': 'Conv3x3', 'shape': [arch.conv2, s // 2, s // 2], 'params': count('conv2')},
        {'id': 'pool2', 'type': 'MaxPool2', 'shape': [arch.conv2, s // 4, s // 4], 'params': 0},
        {'id': 'fc1', 'type': 'Dense', 'shape': [arch.hidden], 'params': count('fc1')},
        {'id': 'fc2', 'type': 'Dense', 'shape': [arch.classes], 'params': count('fc2')},
    ]
    return {'nodes': nodes, 'total_params': int(sum(n['params'] for n in nodes))}


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    n, c, h, wd = x.shape
    f = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 3, 3, h, wd), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + wd]
    cols = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * h * wd, c * 9)
    out = cols @ w.reshape(f, c * 9).T + b
    return out.reshape(n, h, wd, f).transpose(0, 3, 1, 2), cols


def _conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape):
    n, c, h, wd = x_shape
    f = w.shape[0]
    dmat = dout.transpose(0, 2, 3, 1).reshape(n * h * wd, f)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ w.reshape(f, c * 9)).reshape(n, h, wd, c, 3, 3).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((n, c, h + 2, wd + 2), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, i, j]
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _pool_forward(x: np.ndarray):
    n, c, h, w = x.shape
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # first maximum wins on ties
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., np.newaxis], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout: np.ndarray, idx: np.ndarray, x_shape):
    n, c, h, w = x_shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., np.newaxis], dout[..., np.newaxis], axis=-1)
    return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def prepare_images(images: np.ndarray, arch: ArchConfig, dtype) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[np.newaxis]
    expected = (arch.channels, arch.side, arch.side)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ShapeError(f'images of shape {images.shape[1:]} do not match architecture {expected}')

    return images.astype(dtype) / dtype.type(255.0)


def _forward(params: ClassifierParams, x: np.ndarray) -> Tuple[np.ndarray, dict]:
    cache = {'x': x}
    z1, cache['cols1'] = _conv_forward(x, params['conv1.weight'], params['conv1.bias'])
    a1 = np.maximum(z1, 0)
    p1, cache['idx1'] = _pool_forward(a1)
    z2, cache['cols2'] = _conv_forward(p1, params['conv2.weight'], params['conv2.bias'])
    a2 = np.maximum(z2, 0)
    p2, cache['idx2'] = _pool_forward(a2)
    flat = p2.reshape(len(x), -1)
    z3 = flat @ params['fc1.weight'].T + params['fc1.bias']
    a3 = np.maximum(z3, 0)
    logits = a3 @ params['fc2.weight'].T + params['fc2.bias']
    cache.update(z1=z1, p1=p1, z2=z2, p2=p2, flat=flat, z3=z3, a3=a3)
    return logits, cache


def forward(params: ClassifierParams, images: np.ndarray, arch: ArchConfig) -> np.ndarray:
    """
    :param images: uint8 (N, C, H, W) or a single (C, H, W) image
    :return: logits (N, classes)
    """
    check_params(params, arch)
    x = prepare_images(images, arch, params.dtype)
    if len(x) == 0:
        return np.zeros((0, arch.classes), dtype=params.dtype)
    return _forward(params, x)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def one_hot(labels, classes: int, dtype='float64') -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    res = np.zeros((len(labels), classes), dtype=dtype)
    res[np.arange(len(labels)), labels] = 1
    return res


def cross_entropy(target, pred) -> float:
    """
    H(target, pred) = -sum_k target_k * log(max(pred_k, 1e-7)).

    :param target: probability vector, or an int class index (one-hot)
    :param pred: probability vector
    """
    pred = np.asarray(pred, dtype=np.float64)
    if np.isscalar(target) or np.ndim(target) == 0:
        return float(-np.log(max(pred[int(target)], PROB_CLAMP)))

    target = np.asarray(target, dtype=np.float64)
    return float(-(target * np.log(np.maximum(pred, PROB_CLAMP))).sum())


def cross_entropy_rows(labels: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """
    Per-row cross entropy between hard labels and predicted probabilities.
    """
    picked = probs[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)]
    return -np.log(np.maximum(picked.astype(np.float64), PROB_CLAMP))


def weighted_loss(logits: np.ndarray, spec: LossSpec) -> float:
    return float(-(spec.weights[:, np.newaxis] * spec.targets * log_softmax(logits)).sum())


def backward(params: ClassifierParams, images: np.ndarray, spec: LossSpec,
             arch: ArchConfig) -> Tuple[float, ClassifierParams]:
    """
    Gradient of `weighted_loss(forward(params, images), spec)` with respect to every parameter.

    :return: (loss, gradients) where gradients has the structure of params
    """
    loss, grads, _ = loss_and_grads(params, images, spec, arch)
    return loss, grads


def loss_and_grads(params: ClassifierParams, images: np.ndarray, spec: LossSpec,
                   arch: ArchConfig) -> Tuple[float, ClassifierParams, np.ndarray]:
    """
    backward, also returning the logits of the forward pass.
    """
    check_params(params, arch)
    x = prepare_images(images, arch, params.dtype)
    if len(spec.targets) != len(x) or len(spec.weights) != len(x):
        raise ShapeError(f'loss spec covers {len(spec.targets)} rows, batch has {len(x)}')

    logits, cache = _forward(params, x)
    dtype = params.dtype
    targets = spec.targets.astype(dtype)
    weights = spec.weights.astype(dtype)

    row_losses = -(targets * log_softmax(logits)).sum(axis=1)
    loss = float((weights * row_losses).sum())
    if not np.isfinite(loss):
        bad = np.flatnonzero(~np.isfinite(row_losses) & (weights != 0))
        raise TrainingAbort('non-finite loss in backward pass', sample_ids=bad.tolist())

    dlogits = weights[:, np.newaxis] * (softmax(logits) * targets.sum(axis=1, keepdims=True) - targets)

    grads = OrderedDict()
    grads['fc2.weight'] = dlogits.T @ cache['a3']
    grads['fc2.bias'] = dlogits.sum(axis=0)
    dz3 = (dlogits @ params['fc2.weight']) * (cache['z3'] > 0)
    grads['fc1.weight'] = dz3.T @ cache['flat']
    grads['fc1.bias'] = dz3.sum(axis=0)
    dp2 = (dz3 @ params['fc1.weight']).reshape(cache['p2'].shape)
    da2 = _pool_backward(dp2, cache['idx2'], cache['z2'].shape)
    dz2 = da2 * (cache['z2'] > 0)
    dp1, grads['conv2.weight'], grads['conv2.bias'] = _conv_backward(dz2, cache['cols2'], params['conv2.weight'],
                                                                     cache['p1'].shape)
    da1 = _pool_backward(dp1, cache['idx1'], cache['z1'].shape)
    dz1 = da1 * (cache['z1'] > 0)
    _, grads['conv1.weight'], grads['conv1.bias'] = _conv_backward(dz1, cache['cols1'], params['conv1.weight'],
                                                                   x.shape)

    ordered = OrderedDict((name, grads[name].astype(dtype, copy=False)) for name in params.names)
    return loss, ClassifierParams(ordered, params.version), logits


def sgd_momentum_step(params: ClassifierParams, grads: ClassifierParams, velocity: ClassifierParams, lr: float,
                      momentum: float, weight_decay: float) -> Tuple[ClassifierParams, ClassifierParams]:
    """
    v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v

    :return: (new params, new velocity)
    """
    new_params = OrderedDict()
    new_velocity = OrderedDict()
    for name, p in params:
        dtype = p.dtype.type
        v = dtype(momentum) * velocity[name] + grads[name] + dtype(weight_decay) * p
        new_velocity[name] = v
        new_params[name] = p - dtype(lr) * v

    return ClassifierParams(new_params, params.version + 1), ClassifierParams(new_velocity, velocity.version + 1)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise ValueError(f'step {step} out of range [0, {total_steps}]')

    return base_lr * float(np.cos(7.0 * np.pi * step / (16.0 * total_steps)))


def ema_update_params(ema_params: ClassifierParams, params: ClassifierParams, decay: float) -> ClassifierParams:
    if not 0.0 <= decay < 1.0:
        raise ValueError(f'decay {decay} must be in [0, 1)')

    updated = OrderedDict()
    for name, e in ema_params:
        dtype = e.dtype.type
        updated[name] = dtype(decay) * e + dtype(1.0 - decay) * params[name]

    return ClassifierParams(updated, params.version)


def check_gradients(params: ClassifierParams, images: np.ndarray, spec: LossSpec, arch: ArchConfig,
                    step: float = 1e-5, abs_floor: float = 1e-10) -> Dict[str, float]:
    """
    Compares `backward` against central finite differences, entry by entry.

    Run with float64 params. An entry counts with error 0 when analytic and numeric gradient
    agree to `abs_floor` absolutely, otherwise with |analytic - numeric| / max(1e-8, |numeric|).

    :return: max relative error per parameter tensor
    """
    _, grads = backward(params, images, spec, arch)
    shifted = params.copy()
    x = prepare_images(images, arch, shifted.dtype)

    def loss_at() -> float:
        return weighted_loss(_forward(shifted, x)[0], spec)

    errors = {}
    for name, tensor in shifted:
        worst = 0.0
        flat = tensor.reshape(-1)
        analytic = grads[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = loss_at()
            flat[i] = original - step
            minus = loss_at()
            flat[i] = original
            numeric = (plus - minus) / (2 * step)
            diff = abs(analytic[i] - numeric)
            if diff > abs_floor:
                worst = max(worst, diff / max(1e-8, abs(numeric)))
        errors[name] = float(worst)

    return errors


def predict(params: ClassifierParams, images: np.ndarray, arch: ArchConfig, batch_size: Optional[int] = None):
    """
    Class probabilities for a stack of images, evaluated in chunks of batch_size.
    """
    if batch_size is None or batch_size >= len(images):
        return softmax(forward(params, images, arch))

    parts = [softmax(forward(params, images[i:i + batch_size], arch)) for i in range(0, len(images), batch_size)]
    return np.concatenate(parts, axis=0)
