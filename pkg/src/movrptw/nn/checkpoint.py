"""Versioned binary checkpoints: manifest header + little-endian f32 arrays.

Layout: 8-byte magic, u32 version, u64 manifest length, UTF-8 JSON manifest
(array names, shapes, kinds, optimizer step), then the raw arrays in manifest
order. A JSON sidecar (<path>.meta.json) carries run metadata: config, epoch,
rng seed/state.
"""

import json
import struct

import numpy as np

from .params import ParamStore

MAGIC = b"MOVRCKP1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _sidecar(path) -> str:
    return str(path) + ".meta.json"


def save_checkpoint(path, store: ParamStore, meta: dict | None = None,
                    include_optimizer: bool = True) -> None:
    arrays = []
    manifest = {"version": VERSION, "opt_step": store.step_count if include_optimizer else 0,
                "arrays": []}

    def push(name, kind, arr):
        manifest["arrays"].append({"name": name, "kind": kind, "shape": list(arr.shape)})
        arrays.append(np.ascontiguousarray(arr, dtype="<f4"))

    for name, t in store.params.items():
        push(name, "param", t.data)
    for name, b in store.buffers.items():
        push(name, "buffer", b)
    if include_optimizer:
        for name in store.params:
            push(name, "adam_m", store._m[name])
        for name in store.params:
            push(name, "adam_v", store._v[name])

    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(arr.tobytes())
    with open(_sidecar(path), "w") as fh:
        json.dump(meta or {}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
        version, blob_len = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        manifest = json.loads(fh.read(blob_len).decode("utf-8"))
        store = ParamStore(dtype=np.float32)
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            kind = entry["kind"]
            if kind == "param":
                store.add_param(entry["name"], arr)
            elif kind == "buffer":
                store.add_buffer(entry["name"], arr)
            elif kind == "adam_m":
                store._m[entry["name"]] = arr.copy()
            elif kind == "adam_v":
                store._v[entry["name"]] = arr.copy()
            else:
                raise CheckpointError(f"{path}: unknown array kind {kind!r}")
        store.step_count = manifest.get("opt_step", 0)

    try:
        with open(_sidecar(path)) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        meta = {}
    return store, meta
