"""Model container: graph JSON plus a binary weights file.

Weights file layout: magic "NPWT", u32 version, u32 entry count, then per
entry a u16 name length, UTF-8 name, u8 dtype code (0 = f32), u8 rank,
u64 dims, u64 absolute payload offset; a u32 CRC32 of everything before it
closes the header.  Payloads are little-endian f32 at 64-byte-aligned
offsets.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import CorruptModel
from .graph import Graph, Node, OpKind

_MAGIC = b"NPWT"
_VERSION = 1
_ALIGN = 64
_DTYPE_F32 = 0


def write_weights(path, tensors: dict[str, np.ndarray]) -> None:
    names = sorted(tensors)
    header = bytearray(_MAGIC)
    header += struct.pack("<I", _VERSION)
    header += struct.pack("<I", len(names))
    entry_sizes = [2 + len(n.encode()) + 1 + 1 + 8 * tensors[n].ndim + 8
                   for n in names]
    header_len = len(header) + sum(entry_sizes) + 4  # + trailing CRC
    offset = -(-header_len // _ALIGN) * _ALIGN
    offsets = {}
    for n in names:
        a = tensors[n]
        offsets[n] = offset
        offset += a.size * 4
        offset = -(-offset // _ALIGN) * _ALIGN
    for n in names:
        a = tensors[n]
        nb = n.encode()
        header += struct.pack("<H", len(nb)) + nb
        header += struct.pack("<BB", _DTYPE_F32, a.ndim)
        header += struct.pack(f"<{a.ndim}Q", *a.shape) if a.ndim else b""
        header += struct.pack("<Q", offsets[n])
    header += struct.pack("<I", zlib.crc32(bytes(header)))
    with open(path, "wb") as f:
        f.write(header)
        for n in names:
            a = np.ascontiguousarray(tensors[n], dtype="<f4")
            f.seek(offsets[n])
            f.write(a.tobytes())


def read_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != _MAGIC:
        raise CorruptModel(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _VERSION:
        raise CorruptModel(f"{path}: unsupported version {version}")
    (count,) = struct.unpack_from("<I", raw, 8)
    off = 12
    entries = []
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode()
            off += nlen
            dtype, rank = struct.unpack_from("<BB", raw, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}Q", raw, off) if rank else ()
            off += 8 * rank
            (payload_off,) = struct.unpack_from("<Q", raw, off)
            off += 8
            entries.append((name, dtype, dims, payload_off))
        (crc,) = struct.unpack_from("<I", raw, off)
    except struct.error as e:
        raise CorruptModel(f"{path}: truncated header") from e
    except UnicodeDecodeError as e:
        raise CorruptModel(f"{path}: corrupt entry name") from e
    if zlib.crc32(raw[:off]) != crc:
        raise CorruptModel(f"{path}: header checksum mismatch")
    out = {}
    for name, dtype, dims, payload_off in entries:
        if dtype != _DTYPE_F32:
            raise CorruptModel(f"{path}: unknown dtype code {dtype}")
        n = int(np.prod(dims)) if dims else 1
        end = payload_off + n * 4
        if end > len(raw):
            raise CorruptModel(f"{path}: payload for {name!r} out of bounds")
        out[name] = np.frombuffer(raw[payload_off:end], dtype="<f4").reshape(dims).copy()
    return out


def _encode_attrs(attrs: dict, nid: int, sink: dict[str, np.ndarray], prefix=""):
    out = {}
    for k, v in attrs.items():
        if isinstance(v, np.ndarray):
            name = f"n{nid}_{prefix}{k}"
            sink[name] = v.astype(np.float32)
            out[k] = {"$tensor": name}
        elif isinstance(v, dict):
            out[k] = _encode_attrs(v, nid, sink, prefix=f"{prefix}{k}.")
        elif isinstance(v, tuple):
            out[k] = list(v)
        elif isinstance(v, (np.integer,)):
            out[k] = int(v)
        elif isinstance(v, (np.floating,)):
            out[k] = float(v)
        else:
            out[k] = v
    return out


def _decode_attrs(attrs: dict, weights: dict[str, np.ndarray]):
    out = {}
    for k, v in attrs.items():
        if isinstance(v, dict) and "$tensor" in v:
            name = v["$tensor"]
            if name not in weights:
                raise CorruptModel(f"missing tensor {name!r} in weights container")
            out[k] = weights[name]
        elif isinstance(v, dict):
            out[k] = _decode_attrs(v, weights)
        else:
            out[k] = v
    return out


def save_model(g: Graph, json_path, weights_path) -> None:
    tensors: dict[str, np.ndarray] = {}
    nodes = []
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        nodes.append({
            "id": n.id,
            "kind": n.kind.value,
            "attrs": _encode_attrs(n.attrs, nid, tensors),
            "inputs": [list(e) for e in n.inputs],
        })
    doc = {"name": g.name, "nodes": nodes, "outputs": list(g.outputs)}
    with open(json_path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    write_weights(weights_path, tensors)


def load_model(json_path, weights_path) -> Graph:
    try:
        with open(json_path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise CorruptModel(f"{json_path}: {e}") from e
    weights = read_weights(weights_path)
    g = Graph(doc.get("name", "model"))
    for nd in doc["nodes"]:
        try:
            kind = OpKind(nd["kind"])
        except ValueError as e:
            raise CorruptModel(f"unknown op kind {nd['kind']!r}") from e
        attrs = _decode_attrs(nd.get("attrs", {}), weights)
        if "shape" in attrs:
            attrs["shape"] = tuple(attrs["shape"])
        node = Node(nd["id"], kind, attrs, [tuple(e) for e in nd["inputs"]])
        g.add_node(node)
    g.outputs = list(doc["outputs"])
    return g
