"""Named parameter groups, gradients, and the checkpoint format.

Parameters live in a flat mapping keyed by (group, name). Groups are the
unit of optimizer scheduling and of freezing: a training phase hands the
optimizer an explicit list of active groups and everything else stays
bit-identical.

Checkpoint layout: u32 little-endian header length, UTF-8 JSON header
(entries carry group, name, dtype, shape, byte offset), then the raw
little-endian array payloads concatenated in header order.
"""

import json
import struct

import numpy as np

_DTYPES = {"float32": np.float32, "float64": np.float64}


class ParamStore:
    """Flat (group, name) -> ndarray mapping with shape immutability."""

    def __init__(self):
        self._data: dict[tuple[str, str], np.ndarray] = {}

    def add(self, group: str, name: str, value: np.ndarray) -> None:
        key = (group, name)
        if key in self._data:
            raise KeyError(f"parameter {group}/{name} already exists")
        value = np.asarray(value)
        if not np.all(np.isfinite(value)):
            raise ValueError(f"parameter {group}/{name} has non-finite entries")
        self._data[key] = value

    def get(self, group: str, name: str) -> np.ndarray:
        return self._data[(group, name)]

    def set(self, group: str, name: str, value: np.ndarray) -> None:
        key = (group, name)
        old = self._data[key]
        value = np.asarray(value)
        if value.shape != old.shape:
            raise ValueError(
                f"shape change for {group}/{name}: {old.shape} -> {value.shape}")
        if not np.all(np.isfinite(value)):
            raise ValueError(f"parameter {group}/{name} has non-finite entries")
        self._data[key] = value.astype(old.dtype, copy=False)

    def groups(self) -> list[str]:
        seen = dict.fromkeys(g for g, _ in self._data)
        return list(seen)

    def items(self, group: str | None = None):
        for (g, n), v in self._data.items():
            if group is None or g == group:
                yield (g, n), v

    def keys(self) -> list[tuple[str, str]]:
        return list(self._data)

    def __contains__(self, key) -> bool:
        return tuple(key) in self._data

    def count(self, groups: list[str] | None = None) -> int:
        """Total number of scalar entries across the given groups."""
        gs = set(groups) if groups is not None else None
        return sum(v.size for (g, _), v in self._data.items()
                   if gs is None or g in gs)

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for (g, n), v in self._data.items():
            out._data[(g, n)] = v.copy()
        return out


class Gradients:
    """Gradient arrays keyed like the store they were taken against."""

    def __init__(self):
        self._data: dict[tuple[str, str], np.ndarray] = {}

    def set(self, group: str, name: str, value: np.ndarray) -> None:
        self._data[(group, name)] = np.asarray(value)

    def get(self, group: str, name: str) -> np.ndarray:
        return self._data[(group, name)]

    def items(self):
        return self._data.items()

    def __contains__(self, key) -> bool:
        return tuple(key) in self._data

    def __len__(self) -> int:
        return len(self._data)


def save_checkpoint(path: str, store: ParamStore, extra: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for (g, n), v in store.items():
        if v.dtype.name not in _DTYPES:
            raise ValueError(f"unsupported dtype {v.dtype} for {g}/{n}")
        raw = np.ascontiguousarray(v).astype(v.dtype.newbyteorder("<")).tobytes()
        entries.append({"group": g, "name": n, "dtype": v.dtype.name,
                        "shape": list(v.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {"entries": entries, "extra": extra or {}}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path: str) -> tuple[ParamStore, dict]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise ValueError("checkpoint truncated: missing header length")
    (hlen,) = struct.unpack_from("<I", data, 0)
    if 4 + hlen > len(data):
        raise ValueError("checkpoint truncated: header extends past end of file")
    header = json.loads(data[4:4 + hlen].decode("utf-8"))
    payload = data[4 + hlen:]
    store = ParamStore()
    for e in header["entries"]:
        dt = _DTYPES[e["dtype"]]
        shape = tuple(e["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dt).itemsize
        chunk = payload[e["offset"]:e["offset"] + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"checkpoint truncated in payload of "
                             f"{e['group']}/{e['name']}")
        arr = np.frombuffer(chunk, dtype=np.dtype(dt).newbyteorder("<"))
        store.add(e["group"], e["name"], arr.reshape(shape).astype(dt))
    return store, header.get("extra", {})


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
           shape: tuple, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def uniform_small(rng: np.random.Generator, shape: tuple, scale: float,
                  dtype=np.float32) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)
