# ============================================
# components/checkpoint.py
# ============================================

"""
Binary checkpoint format for PolicyParams.

Layout (little-endian throughout):

    b"URM2"                      magic
    u32 version                  currently 1
    u32 entry count
    per entry:
        u16 name length, name (UTF-8)
        u32 ndim, ndim x u64 dims
        u64 offset               byte offset of the tensor inside the data block
    data block                   raw f64 tensors, back to back, in entry order

The policy kind is recovered from the tensor names: `actor.` / `critic.` for
urma_v2, `zp.` for zero_padding, `mh.` for multi_head.
"""

import logging
import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from components.network import PolicyParams
from utils.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"URM2"
VERSION = 1

_KIND_PREFIXES = (
    ("zp.", "zero_padding"),
    ("mh.", "multi_head"),
    ("actor.", "urma_v2"),
    ("critic.", "urma_v2"),
)


def infer_kind(names: List[str]) -> str:
    kinds = set()
    for name in names:
        for prefix, kind in _KIND_PREFIXES:
            if name.startswith(prefix):
                kinds.add(kind)
                break
        else:
            raise CheckpointError(f"tensor '{name}' does not belong to any policy kind")
    if len(kinds) != 1:
        raise CheckpointError(f"checkpoint mixes policy kinds: {sorted(kinds)}")
    return kinds.pop()


def encode_checkpoint(params: PolicyParams) -> bytes:
    """Serialize parameters; names are written in insertion order."""
    header = [MAGIC, struct.pack("<II", VERSION, len(params))]
    blobs = []
    offset = 0
    for name in params:
        array = np.ascontiguousarray(params[name], dtype="<f8")
        encoded = name.encode("utf-8")
        header.append(struct.pack("<H", len(encoded)))
        header.append(encoded)
        header.append(struct.pack("<I", array.ndim))
        header.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        header.append(struct.pack("<Q", offset))
        blob = array.tobytes()
        blobs.append(blob)
        offset += len(blob)
    return b"".join(header) + b"".join(blobs)


def decode_checkpoint(data: bytes) -> PolicyParams:
    """
    Parse checkpoint bytes.

    Raises:
        CheckpointError: bad magic, unsupported version, corrupt names, truncated header or data
    """
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    cursor = 4

    def take(fmt: str) -> Tuple:
        nonlocal cursor
        size = struct.calcsize(fmt)
        if cursor + size > len(data):
            raise CheckpointError("truncated checkpoint header")
        values = struct.unpack_from(fmt, data, cursor)
        cursor += size
        return values

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    entries = []
    for _ in range(count):
        (length,) = take("<H")
        if cursor + length > len(data):
            raise CheckpointError("truncated checkpoint header")
        try:
            name = data[cursor:cursor + length].decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"corrupt tensor name at byte {cursor}") from None
        cursor += length
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        (offset,) = take("<Q")
        entries.append((name, tuple(int(d) for d in shape), int(offset)))

    base = cursor
    arrays: Dict[str, np.ndarray] = {}
    for name, shape, offset in entries:
        size = int(np.prod(shape, dtype=np.int64)) * 8
        start = base + offset
        if start + size > len(data):
            raise CheckpointError(f"truncated data for tensor '{name}'")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=start).astype(np.float64).reshape(shape)

    kind = infer_kind(list(arrays))
    return PolicyParams(kind, arrays)


def save_checkpoint(params: PolicyParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params))
    logger.info("saved %s checkpoint (%d tensors) to %s", params.kind, len(params), path)
    return path


def load_checkpoint(path: Union[str, Path]) -> PolicyParams:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    params = decode_checkpoint(path.read_bytes())
    logger.debug("loaded %s checkpoint (%d tensors) from %s", params.kind, len(params), path)
    return params
