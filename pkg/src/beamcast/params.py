"""Named parameter storage, counter-based seeded init, and checkpoint files.

Checkpoint layout (little-endian): magic ``BPCK``, u16 version, u32 tensor
count, then per tensor a u16 name length, the UTF-8 name, a u8 trainable
flag, a u8 rank, u32 dims, and the float32 payload.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor

_MAGIC = b"BPCK"
_VERSION = 1
_MASK64 = 0xFFFFFFFFFFFFFFFF


def seeded_rng(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator keyed by (seed, name), order-independent."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = [int(seed) & _MASK64, int.from_bytes(digest[:8], "little")]
    return np.random.Generator(np.random.Philox(key=key))


def seeded_init(name: str, shape, scheme: str, seed: int) -> Tensor:
    """Deterministic tensor init: 'uniform-scaled', 'zeros', or 'ones'.

    uniform-scaled draws U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in
    taken as the leading dimension.
    """
    shape = tuple(int(n) for n in shape)
    if any(n < 1 for n in shape):
        raise ValueError(f"invalid shape {shape}")
    if scheme == "zeros":
        return Tensor(np.zeros(shape, dtype=np.float32))
    if scheme == "ones":
        return Tensor(np.ones(shape, dtype=np.float32))
    if scheme == "uniform-scaled":
        fan_in = shape[0] if shape else 1
        bound = 1.0 / np.sqrt(fan_in)
        vals = seeded_rng(seed, name).uniform(-bound, bound, size=shape)
        return Tensor(vals.astype(np.float32))
    raise ValueError(f"unknown init scheme {scheme!r}")


class ParamStore:
    """Named tensors with trainable/frozen flags; frozen data is read-only."""

    def __init__(self):
        self._entries: dict[str, tuple[Tensor, bool]] = {}

    def add(self, name: str, tensor: Tensor, trainable: bool) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = trainable
        if not trainable:
            tensor.data.flags.writeable = False
            # immutable payload: safe to cache the float64 shadow
            tensor.fdata = tensor.data.astype(np.float64)
        self._entries[name] = (tensor, trainable)
        return tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name][0]

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def is_trainable(self, name: str) -> bool:
        return self._entries[name][1]

    def items(self):
        for name, (tensor, trainable) in self._entries.items():
            yield name, tensor, trainable

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, (t, flag) in self._entries.items() if flag}

    def frozen_names(self) -> list[str]:
        return [n for n, (_, flag) in self._entries.items() if not flag]

    def zero_grads(self):
        for tensor in self.trainable().values():
            tensor.grad = None

    def replace_data(self, name: str, data: np.ndarray):
        """Overwrite a tensor's payload in place (used by load/restore)."""
        tensor, trainable = self._entries[name]
        if tuple(data.shape) != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: {tensor.data.shape} vs {tuple(data.shape)}")
        writable = tensor.data.flags.writeable
        if not writable:
            tensor.data.flags.writeable = True
        tensor.data[...] = data.astype(np.float32)
        if not writable:
            tensor.data.flags.writeable = False
            tensor.fdata = tensor.data.astype(np.float64)

    def checksum(self, names=None) -> str:
        """SHA-256 over sorted (name, shape, payload) triples."""
        digest = hashlib.sha256()
        for name in sorted(names if names is not None else self._entries):
            tensor = self._entries[name][0]
            digest.update(name.encode("utf-8"))
            digest.update(np.asarray(tensor.data.shape, dtype="<u4").tobytes())
            digest.update(np.ascontiguousarray(tensor.data).tobytes())
        return digest.hexdigest()

    def frozen_checksum(self) -> str:
        return self.checksum(self.frozen_names())

    # -- checkpoint file I/O --------------------------------------------

    def save(self, path) -> Path:
        path = Path(path)
        blobs = [struct.pack("<4sHI", _MAGIC, _VERSION, len(self._entries))]
        for name, (tensor, trainable) in self._entries.items():
            raw = name.encode("utf-8")
            dims = tensor.data.shape
            blobs.append(struct.pack("<H", len(raw)))
            blobs.append(raw)
            blobs.append(struct.pack("<BB", int(trainable), len(dims)))
            blobs.append(struct.pack(f"<{len(dims)}I", *dims) if dims else b"")
            blobs.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
        path.write_bytes(b"".join(blobs))
        return path

    @classmethod
    def load(cls, path) -> "ParamStore":
        store = cls()
        for name, trainable, data in _read_checkpoint(path):
            store.add(name, Tensor(data), trainable)
        return store

    def load_into(self, path):
        """Load a checkpoint into this store; names and shapes must match."""
        seen = set()
        for name, _, data in _read_checkpoint(path):
            if name not in self._entries:
                raise CheckpointError(f"checkpoint tensor {name!r} not present in store")
            self.replace_data(name, data)
            seen.add(name)
        missing = set(self._entries) - seen
        if missing:
            raise CheckpointError(f"checkpoint is missing tensor {sorted(missing)[0]!r}")


def _read_checkpoint(path):
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(view):
            raise CheckpointError(f"corrupt checkpoint {path}: truncated")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    magic, version, count = struct.unpack("<4sHI", take(10))
    if magic != _MAGIC:
        raise CheckpointError(f"corrupt checkpoint {path}: bad magic {magic!r}")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        trainable, rank = struct.unpack("<BB", take(2))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_vals = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(4 * n_vals), dtype="<f4").reshape(dims).copy()
        out.append((name, bool(trainable), data))
    if offset != len(view):
        raise CheckpointError(f"corrupt checkpoint {path}: trailing bytes")
    return out
