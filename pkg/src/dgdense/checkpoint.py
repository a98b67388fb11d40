"""Binary checkpoint files shared by every training stage.

Layout (all little-endian):
  magic "VLTB" | version u32 | count u32 |
  per tensor: name_len u16, name utf-8, rank u8, dims u32 * rank, f64 data |
  checksum u64 = sum of all tensor payload bytes mod 2^64.

The config fingerprint rides along as a 1-element tensor named
"meta.fingerprint" (48-bit hash, exact in float64).
"""

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"VLTB"
VERSION = 1
_FP_NAME = "meta.fingerprint"


@dataclass
class Checkpoint:
    tensors: dict = field(default_factory=dict)
    fingerprint: int = 0


def fingerprint_of(text):
    """48-bit FNV-1a of a config string; small enough to be exact in f64."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h & 0xFFFFFFFFFFFF


def save_checkpoint(ckpt, path):
    items = dict(ckpt.tensors)
    items[_FP_NAME] = np.array([float(ckpt.fingerprint)])
    checksum = np.uint64(0)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(items)))
        for name in sorted(items):
            arr = np.ascontiguousarray(items[name], dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            payload = arr.tobytes()
            f.write(payload)
            checksum += np.frombuffer(payload, np.uint8).sum(dtype=np.uint64)
        f.write(struct.pack("<Q", int(checksum)))


def _need(buf, offset, n, path):
    if offset + n > len(buf):
        raise ValueError(f"{path}: truncated at byte {offset} (need {n} more)")
    return buf[offset:offset + n], offset + n


def load_checkpoint(path):
    with open(path, "rb") as f:
        buf = f.read()
    off = 0
    raw, off = _need(buf, off, 4, path)
    if raw != MAGIC:
        raise ValueError(f"{path}: bad magic {raw!r} at byte 0")
    raw, off = _need(buf, off, 8, path)
    version, count = struct.unpack("<II", raw)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    tensors = {}
    checksum = np.uint64(0)
    for _ in range(count):
        raw, off = _need(buf, off, 2, path)
        (nlen,) = struct.unpack("<H", raw)
        raw, off = _need(buf, off, nlen, path)
        name = raw.decode("utf-8")
        raw, off = _need(buf, off, 1, path)
        rank = raw[0]
        raw, off = _need(buf, off, 4 * rank, path)
        dims = struct.unpack(f"<{rank}I", raw) if rank else ()
        n = int(np.prod(dims)) if rank else 1
        payload, off = _need(buf, off, 8 * n, path)
        tensors[name] = np.frombuffer(payload, "<f8").reshape(dims).copy()
        checksum += np.frombuffer(payload, np.uint8).sum(dtype=np.uint64)
    raw, off = _need(buf, off, 8, path)
    (stored,) = struct.unpack("<Q", raw)
    if stored != int(checksum):
        raise ValueError(f"{path}: checksum mismatch at byte {off - 8} "
                         f"(stored {stored}, computed {int(checksum)})")
    fp = 0
    if _FP_NAME in tensors:
        fp = int(tensors.pop(_FP_NAME)[0])
    return Checkpoint(tensors=tensors, fingerprint=fp)
