"""Self-describing binary container for named arrays plus a JSON meta block.

Layout: magic, little-endian uint64 header length, UTF-8 JSON header listing
(name, dtype, shape, offset, nbytes) per array, then the raw array payloads.
No timestamps or other ambient state, so identical inputs give identical
bytes; writes go to a temp file and are renamed into place atomically.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"BFCHKPT1"


def save_arrays(path, arrays, meta=None):
    """arrays: mapping name -> ndarray (saved in insertion order)."""
    entries = []
    payloads = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        raw = a.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": a.dtype.str,
                "shape": list(a.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"arrays": entries, "meta": meta or {}}, sort_keys=True
    ).encode("utf-8")
    dirpath = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(dirpath, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirpath, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for raw in payloads:
                f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_arrays(path):
    """Returns (arrays: dict name -> ndarray, meta: dict)."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        body = f.read()
    arrays = {}
    for e in header["arrays"]:
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(
            e["shape"]
        ).copy()
    return arrays, header.get("meta", {})


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
