from collections import OrderedDict

import numpy as np
import pytest

from saakit.checkpoint import load_checkpoint, save_checkpoint
from saakit.errors import CheckpointError
from saakit.model import ArchConfig
from saakit.network import init_params

ARCH = ArchConfig(channels=1, side=4, classes=3, conv1=2, conv2=2, hidden=4)


def tensors():
    params = init_params(ARCH, np.random.default_rng(0))
    res = OrderedDict(('params/' + k, v) for k, v in params)
    res['history/h'] = np.random.default_rng(1).random(5)
    res['history/f'] = np.array([True, False, True, False, False])
    res['history/observed'] = np.arange(5, dtype=np.int64)
    res['scalar'] = np.array(3.5)
    return res


def test_round_trip_is_exact(tmp_path):
    path = str(tmp_path / 'ckpt.bin')
    original = tensors()
    save_checkpoint(path, original, ARCH, {'epoch': 3, 'iteration': 48})

    meta, loaded = load_checkpoint(path, ARCH)
    assert meta == {'epoch': 3, 'iteration': 48}
    assert list(loaded) == list(original)
    for name, array in original.items():
        assert np.array_equal(loaded[name], array)
    assert loaded['params/conv1.weight'].dtype == np.float32
    assert loaded['history/h'].dtype == np.float64
    assert loaded['scalar'].shape == ()


def test_architecture_mismatch(tmp_path):
    path = str(tmp_path / 'ckpt.bin')
    save_checkpoint(path, tensors(), ARCH)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, ARCH._replace(hidden=5))
    # without an architecture the hash is not checked
    load_checkpoint(path)


def test_corrupt_files(tmp_path):
    path = tmp_path / 'ckpt.bin'
    save_checkpoint(str(path), tensors(), ARCH)
    raw = path.read_bytes()

    path.write_bytes(b'XXXX' + raw[4:])
    with pytest.raises(CheckpointError, match='magic'):
        load_checkpoint(str(path))

    path.write_bytes(raw[:4] + b'\x09\x00' + raw[6:])
    with pytest.raises(CheckpointError, match='version'):
        load_checkpoint(str(path))

    path.write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match='truncated'):
        load_checkpoint(str(path))

    path.write_bytes(raw + b'\x00')
    with pytest.raises(CheckpointError, match='trailing'):
        load_checkpoint(str(path))

    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / 'missing.bin'))


def test_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(str(tmp_path / 'ckpt.bin'), OrderedDict(x=np.zeros(2, dtype=np.complex64)), ARCH)
