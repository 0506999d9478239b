"""Binary parameter checkpoints.

Layout (little-endian): ``b"DXCK"``, version u32, count u32, then per
entry: name length u32, UTF-8 name, rank u32, rank x dim u32, float32
payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .params import ParamStore

MAGIC = b"DXCK"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(store: ParamStore | dict[str, np.ndarray], path, prefix: str = "") -> Path:
    path = Path(path)
    state = store.state_dict(prefix) if isinstance(store, ParamStore) else \
        {k: v for k, v in store.items() if k.startswith(prefix)}
    chunks = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        raw = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


def read_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        off = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + n].decode()
            off += n
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if off + 4 * size > len(buf):
                raise CheckpointFormatError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims).astype(np.float32)
            off += 4 * size
    except struct.error as exc:
        raise CheckpointFormatError(f"{path}: truncated checkpoint") from exc
    if off != len(buf):
        raise CheckpointFormatError(f"{path}: {len(buf) - off} trailing bytes")
    return out


def load_checkpoint(path, seed: int = 0) -> ParamStore:
    """Stand-alone store holding exactly the checkpoint's parameters."""
    store = ParamStore(seed)
    for name, arr in read_checkpoint(path).items():
        t = store.create(name, arr.shape, init="zeros")
        t.data = arr.copy()
    return store


def load_into(store: ParamStore, path, prefix: str = "", strict: bool = True) -> list[str]:
    """Load checkpoint entries under ``prefix`` into an existing store."""
    return store.load_state_dict(read_checkpoint(path), prefix=prefix, strict=strict)
