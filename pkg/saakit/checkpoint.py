"""
Binary checkpoint format, all integers little-endian:

    magic 'SAAK' | version u16 | sha256 of the architecture config (32 bytes)
    metadata length u32 | metadata (JSON)
    tensor count u32
    per tensor: name length u16 | name (utf8) | dtype code u8 ('f' float32, 'd' float64, 'q' int64)
                | rank u8 | extents u32 * rank | raw little-endian data
"""
import os
import struct
from collections import OrderedDict
from typing import Optional, Tuple

import numpy as np
import simplejson

from saakit.errors import CheckpointError
from saakit.model import ArchConfig
from saakit.network import arch_hash

MAGIC = b'SAAK'
VERSION = 1

DTYPES = {
    b'f': np.dtype('<f4'),
    b'd': np.dtype('<f8'),
    b'q': np.dtype('<i8'),
}
CODES = {v: k for k, v in DTYPES.items()}


def _code_for(array: np.ndarray) -> bytes:
    if array.dtype == np.bool_:
        return b'q'
    dtype = array.dtype.newbyteorder('<')
    if dtype not in CODES:
        raise CheckpointError(f'cannot store dtype {array.dtype} in a checkpoint')
    return CODES[dtype]


def save_checkpoint(path: str, tensors: 'OrderedDict[str, np.ndarray]', arch: ArchConfig, meta: Optional[dict] = None):
    meta_bytes = simplejson.dumps(meta or {}, sort_keys=True).encode('utf8')
    chunks = [MAGIC, struct.pack('<H', VERSION), arch_hash(arch), struct.pack('<I', len(meta_bytes)), meta_bytes,
              struct.pack('<I', len(tensors))]

    for name, array in tensors.items():
        code = _code_for(array)
        # ascontiguousarray promotes scalars to 1-d
        data = np.ascontiguousarray(array, dtype=DTYPES[code]).reshape(np.shape(array))
        name_bytes = name.encode('utf8')
        chunks.append(struct.pack('<H', len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(code)
        chunks.append(struct.pack('<B', data.ndim))
        chunks.append(struct.pack('<%dI' % data.ndim, *data.shape))
        chunks.append(data.tobytes())

    tmp = path + '.tmp'
    with open(tmp, 'wb') as h:
        h.write(b''.join(chunks))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw: bytes, path: str):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f'{self.path}: truncated checkpoint')
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str, arch: Optional[ArchConfig] = None) -> Tuple[dict, 'OrderedDict[str, np.ndarray]']:
    """
    :param arch: when given, the stored architecture hash must match it
    :return: (metadata, tensors)
    """
    if not os.path.isfile(path):
        raise CheckpointError(f'{path}: checkpoint not found')
    with open(path, 'rb') as h:
        reader = _Reader(h.read(), path)

    if reader.take(4) != MAGIC:
        raise CheckpointError(f'{path}: not a checkpoint (bad magic)')
    version, = reader.unpack('<H')
    if version != VERSION:
        raise CheckpointError(f'{path}: checkpoint version {version} not supported, expected {VERSION}')
    stored_hash = reader.take(32)
    if arch is not None and stored_hash != arch_hash(arch):
        raise CheckpointError(f'{path}: checkpoint was written for a different architecture')

    meta_len, = reader.unpack('<I')
    try:
        meta = simplejson.loads(reader.take(meta_len).decode('utf8'))
    except (ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f'{path}: corrupt metadata: {e}')

    count, = reader.unpack('<I')
    tensors = OrderedDict()
    for _ in range(count):
        name_len, = reader.unpack('<H')
        name = reader.take(name_len).decode('utf8')
        code = reader.take(1)
        if code not in DTYPES:
            raise CheckpointError(f'{path}: unknown dtype code {code!r} for {name}')
        rank, = reader.unpack('<B')
        shape = reader.unpack('<%dI' % rank) if rank else ()
        dtype = DTYPES[code]
        size = int(np.prod(shape)) * dtype.itemsize
        tensors[name] = np.frombuffer(reader.take(size), dtype=dtype).reshape(shape).astype(dtype.newbyteorder('='))

    if reader.pos != len(reader.raw):
        raise CheckpointError(f'{path}: trailing bytes after the last tensor')

    return meta, tensors
