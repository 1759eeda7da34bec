"""Binary checkpoint files.

Layout, all little-endian: the magic `LWNN`, a u16 format version, a u32 manifest length, the manifest as UTF-8 JSON
(model kind, build config and the name and shape of every tensor, in order), then every tensor as 32-bit floats in
manifest order."""

import json
import logging
from collections import OrderedDict, namedtuple
from struct import calcsize, pack, unpack

import numpy as np
import torch

from src.errors import CheckpointError, ConfigError

logger = logging.getLogger(__name__)

CKPT_MAGIC = b'LWNN'
CKPT_FORMAT_VERSION = 1
CKPT_HEADER_FMT = '<4sHI'
CKPT_HEADER_SIZE = calcsize(CKPT_HEADER_FMT)
TENSOR_DTYPE = np.dtype('<f4')

Checkpoint = namedtuple('Checkpoint', ('model', 'config', 'tensors'))


def _manifest_bytes(ckpt: Checkpoint) -> bytes:
    manifest = {
        'model': ckpt.model,
        'config': ckpt.config,
        'tensors': [[name, list(t.shape)] for name, t in ckpt.tensors.items()],
    }
    return json.dumps(manifest, sort_keys=True, separators=(',', ':')).encode('utf-8')


def write_checkpoint(ckpt: Checkpoint, path):
    """Writes the checkpoint to the file at `path`."""

    manifest = _manifest_bytes(ckpt)
    with open(path, 'wb') as fp:
        fp.write(pack(CKPT_HEADER_FMT, CKPT_MAGIC, CKPT_FORMAT_VERSION, len(manifest)))
        fp.write(manifest)
        for t in ckpt.tensors.values():
            fp.write(np.ascontiguousarray(t, dtype=TENSOR_DTYPE).tobytes())


def read_checkpoint(path) -> Checkpoint:
    """Reads a checkpoint written by `write_checkpoint`."""

    with open(path, 'rb') as fp:
        blob = fp.read()

    if len(blob) < CKPT_HEADER_SIZE:
        raise CheckpointError('%s is too short to be a checkpoint' % path)
    magic, version, manifest_len = unpack(CKPT_HEADER_FMT, blob[:CKPT_HEADER_SIZE])
    if magic != CKPT_MAGIC:
        raise CheckpointError('%s is not a checkpoint (magic %r)' % (path, magic))
    if version != CKPT_FORMAT_VERSION:
        raise CheckpointError('%s has unsupported format version %i' % (path, version))

    offset = CKPT_HEADER_SIZE + manifest_len
    try:
        manifest = json.loads(blob[CKPT_HEADER_SIZE:offset].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError('%s has a corrupt manifest: %s' % (path, e))
    try:
        model, config = manifest['model'], manifest['config']
        entries = [(str(name), tuple(int(d) for d in shape)) for name, shape in manifest['tensors']]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError('%s has an incomplete manifest: %r' % (path, e))
    if not isinstance(model, str) or not isinstance(config, dict) or any(d < 0 for _, s in entries for d in s):
        raise CheckpointError('%s has a malformed manifest' % path)

    tensors = OrderedDict()
    for name, shape in entries:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + count * TENSOR_DTYPE.itemsize
        if end > len(blob):
            raise CheckpointError('%s is truncated inside tensor %s' % (path, name))
        tensors[name] = np.frombuffer(blob, TENSOR_DTYPE, count, offset).reshape(shape).astype(np.float32)
        offset = end
    if offset != len(blob):
        raise CheckpointError('%s has %i trailing bytes' % (path, len(blob) - offset))

    return Checkpoint(model, config, tensors)


def module_tensors(module: torch.nn.Module) -> OrderedDict:
    """Floating-point parameters and buffers of `module` in declaration order. Integer bookkeeping buffers (batch
    counters) are left out."""

    return OrderedDict((name, t.detach().cpu().numpy().astype(np.float32))
                       for name, t in module.state_dict().items() if t.is_floating_point())


def load_tensors(module: torch.nn.Module, tensors: dict):
    """Copies `tensors` into `module`, which must declare exactly the same floating-point tensors."""

    expected = {name: tuple(t.shape) for name, t in module.state_dict().items() if t.is_floating_point()}
    got = {name: tuple(t.shape) for name, t in tensors.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        raise ConfigError('Checkpoint does not fit the model (missing %s, unexpected %s, or shapes differ)'
                          % (missing[:3], extra[:3]))

    state = {name: torch.from_numpy(np.array(t)) for name, t in tensors.items()}
    module.load_state_dict(state, strict=False)
    logger.debug('Loaded %i tensors', len(state))


__all__ = ['Checkpoint', 'CKPT_MAGIC', 'CKPT_FORMAT_VERSION', 'write_checkpoint', 'read_checkpoint',
           'module_tensors', 'load_tensors']
