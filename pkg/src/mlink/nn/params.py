"""Named parameter tensors and their binary stream format.

Stream layout (all integers little-endian)::

    b"MLNK" | version u16 | tensor count u32
    per tensor: name length u16 | UTF-8 name | rank u8 | extents u32 * rank
                | float64 values, row-major
    CRC32 (u32) of every preceding byte
"""
import struct
import zlib

import numpy as np

MAGIC = b"MLNK"
VERSION = 1


class StreamError(ValueError):
    """Raised when a parameter stream is truncated or corrupt."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at byte {position})")
        self.position = position


class ParamSet:
    """Ordered mapping from unique names to float64 arrays."""

    def __init__(self, items=()):
        self._tensors = {}
        if isinstance(items, dict):
            items = items.items()
        for name, value in items:
            self.add(name, value)

    def add(self, name, value):
        if not isinstance(name, str) or not name:
            raise ValueError("parameter names must be non-empty strings")
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._tensors[name] = np.array(value, dtype=np.float64)
        return self._tensors[name]

    def __getitem__(self, name):
        return self._tensors[name]

    def __setitem__(self, name, value):
        if name not in self._tensors:
            raise KeyError(name)
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._tensors[name].shape:
            raise ValueError(
                f"shape mismatch for {name!r}: {arr.shape} != {self._tensors[name].shape}"
            )
        self._tensors[name][...] = arr

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self):
        return list(self._tensors)

    @property
    def total_count(self):
        return int(sum(t.size for t in self._tensors.values()))

    def copy(self):
        return ParamSet((k, v.copy()) for k, v in self._tensors.items())

    def zeros_like(self):
        return ParamSet((k, np.zeros_like(v)) for k, v in self._tensors.items())

    def flat(self):
        if not self._tensors:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._tensors.values()])

    def assign_flat(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.total_count:
            raise ValueError(f"expected {self.total_count} values, got {vector.size}")
        offset = 0
        for v in self._tensors.values():
            v[...] = vector[offset : offset + v.size].reshape(v.shape)
            offset += v.size

    def same_layout(self, other):
        return self.names() == other.names() and all(
            self[k].shape == other[k].shape for k in self
        )

    def __eq__(self, other):
        if not isinstance(other, ParamSet) or not self.same_layout(other):
            return False
        # bitwise, so NaN payloads and signed zeros count too
        return all(
            self[k].tobytes() == other[k].tobytes() for k in self
        )

    def __repr__(self):
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._tensors.items())
        return f"ParamSet({shapes})"


def stream_size(params):
    """Byte length of ``save_params(params)`` without serializing."""
    size = 4 + 2 + 4 + 4
    for name, value in params.items():
        size += 2 + len(name.encode("utf-8")) + 1 + 4 * value.ndim + 8 * value.size
    return size


def save_params(params):
    parts = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def load_params(data):
    data = bytes(data)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data) - 4:
            raise StreamError(f"truncated stream while reading {what}", pos)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if len(data) < 14:
        raise StreamError("stream shorter than header", len(data))
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise StreamError("checksum mismatch", len(data) - 4)
    if take(4, "magic") != MAGIC:
        raise StreamError("bad magic", 0)
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise StreamError(f"unsupported version {version}", 4)
    params = ParamSet()
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StreamError("name is not valid UTF-8", start + 2) from exc
        (rank,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(take(8 * n, f"values of {name!r}"), dtype="<f8")
        try:
            params.add(name, values.reshape(shape))
        except ValueError as exc:
            raise StreamError(str(exc), start) from exc
    if pos != len(data) - 4:
        raise StreamError("trailing bytes after last tensor", pos)
    return params
