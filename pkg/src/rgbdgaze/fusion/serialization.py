"""Parameter container: ``u64 header length | JSON manifest | float32 LE data``."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = "rgbdgaze-params-v1"


def save_params(path, params: dict, metadata: dict | None = None) -> None:
    tensors, offset, chunks = [], 0, []
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                        "dtype": "<f4"})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"format": MAGIC, "metadata": metadata or {},
                         "tensors": tensors}).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_params(path) -> tuple[dict, dict]:
    """Returns ``(params as float64 arrays, metadata)``."""
    raw = Path(path).read_bytes()
    (n,) = struct.unpack_from("<Q", raw, 0)
    manifest = json.loads(raw[8:8 + n])
    if manifest.get("format") != MAGIC:
        raise ValueError(f"{path}: not a parameter container")
    base = 8 + n
    params = {}
    for t in manifest["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype=t["dtype"], count=count, offset=base + t["offset"])
        params[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    return params, manifest["metadata"]
