"""Binary checkpoint files.

Layout (all integers little-endian u32, payloads little-endian f64)::

    b"KSGN" | version | { name_len | utf-8 name | rank | dims[rank] | payload }* | crc32

Entries are written sorted by name.  The trailing CRC32 covers every byte
before it.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .nn import MlpSpec, ParamStore

MAGIC = b"KSGN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(entries: dict[str, np.ndarray]) -> bytes:
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", VERSION)
    for name in sorted(entries, key=lambda s: s.encode("utf-8")):
        arr = np.asarray(entries[name], dtype="<f8")
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
        buf += np.ascontiguousarray(arr).tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    return bytes(buf)


def decode(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("bad magic: not a KSGN checkpoint")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("checksum mismatch")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    entries = {}
    pos, end = 8, len(data) - 4
    try:
        while pos < end:
            (n,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > end:
                raise CheckpointError(f"truncated payload for entry {name!r}")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
            entries[name] = arr.astype(np.float64).reshape(dims)
            pos += 8 * count
    except struct.error as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from None
    return entries


def save(path, entries: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(entries))


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def store_entries(prefix: str, spec: MlpSpec, store: ParamStore) -> dict[str, np.ndarray]:
    """Flatten one network (architecture hints, parameters, optimiser state)."""
    out = {}
    for k, v in store.params.items():
        out[f"{prefix}.{k}"] = v
        out[f"{prefix}.{k}.adam.m"] = store.adam_m[k]
        out[f"{prefix}.{k}.adam.v"] = store.adam_v[k]
    for k, u in store.sn_u.items():
        out[f"{prefix}.{k}.sn_u"] = u
    out[f"{prefix}.adam.step"] = np.array(float(store.step))
    slope = spec.leaky_slope if spec.activation == "leaky_relu" else 0.0
    out[f"{prefix}.meta.leaky_slope"] = np.array(slope)
    out[f"{prefix}.meta.spectral_norm"] = np.array(float(spec.spectral_norm))
    return out


def restore_store(entries: dict[str, np.ndarray], prefix: str) -> tuple[MlpSpec, ParamStore]:
    """Inverse of :func:`store_entries`; the layer widths come from weight shapes."""
    p = prefix + "."
    try:
        slope = float(entries[p + "meta.leaky_slope"])
        sn = bool(entries[p + "meta.spectral_norm"])
        step = int(entries[p + "adam.step"])
    except KeyError as e:
        raise CheckpointError(f"checkpoint lacks network {prefix!r} ({e.args[0]} missing)") from None
    store = ParamStore(step=step)
    n_layers = 0
    while p + f"W{n_layers}" in entries:
        n_layers += 1
    if n_layers == 0:
        raise CheckpointError(f"checkpoint has no weights for {prefix!r}")
    bias = p + "b0" in entries
    for i in range(n_layers):
        names = [f"W{i}"] + ([f"b{i}"] if bias else [])
        for k in names:
            store.params[k] = entries[p + k].copy()
            store.adam_m[k] = entries[f"{p}{k}.adam.m"].copy()
            store.adam_v[k] = entries[f"{p}{k}.adam.v"].copy()
        if sn:
            store.sn_u[f"W{i}"] = entries[f"{p}W{i}.sn_u"].copy()
    dims = [store.params["W0"].shape[0]] + [store.params[f"W{i}"].shape[1] for i in range(n_layers)]
    spec = MlpSpec(dims[0], tuple(dims[1:-1]), dims[-1],
                   activation="leaky_relu" if slope > 0 else "relu",
                   leaky_slope=slope if slope > 0 else 0.2, bias=bias, spectral_norm=sn)
    return spec, store
