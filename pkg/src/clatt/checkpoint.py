"""Single-file parameter checkpoints with a documented byte layout.

Layout, all integers little-endian:

    bytes 0..3    magic b"CLT1"
    bytes 4..11   uint64 header length H
    bytes 12..    UTF-8 JSON header of exactly H bytes
    rest          payload: raw little-endian array bytes, back to back

The JSON header is {"entries": [...]} where each entry carries name,
shape (list of ints), dtype (numpy little-endian string such as "<f8"),
offset (relative to the payload start) and nbytes. Entries appear in
payload order, so the format can be read from any language with a JSON
parser and a seek.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

MAGIC = b"CLT1"


class CheckpointError(Exception):
    pass


def _as_array(value) -> np.ndarray:
    data = getattr(value, "data", value)
    arr = np.asarray(data)
    if arr.dtype.kind not in "fiu":
        raise CheckpointError(f"unsupported dtype {arr.dtype} in checkpoint")
    return np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"), copy=False))


def save_checkpoint(path, params: dict) -> None:
    """Write named arrays (or Tensors; .data is used) to a single file."""
    entries = []
    blobs = []
    offset = 0
    for name, value in params.items():
        arr = _as_array(value)
        raw = arr.tobytes()
        entries.append(
            {
                "name": str(name),
                "shape": list(arr.shape),
                "dtype": arr.dtype.str,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"entries": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array(len(header), dtype="<u8").tobytes())
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> dict:
    """Read a checkpoint back as an ordered name -> ndarray mapping."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        size_raw = fh.read(8)
        if len(size_raw) != 8:
            raise CheckpointError("truncated header length")
        header_len = int(np.frombuffer(size_raw, dtype="<u8")[0])
        header_raw = fh.read(header_len)
        if len(header_raw) != header_len:
            raise CheckpointError("truncated header")
        try:
            header = json.loads(header_raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable header: {exc}") from exc
        payload = fh.read()
    out = {}
    for entry in header.get("entries", []):
        name = entry["name"]
        start = entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(payload):
            raise CheckpointError(f"entry {name!r} runs past end of file")
        arr = np.frombuffer(payload[start:stop], dtype=np.dtype(entry["dtype"]))
        out[name] = arr.reshape(entry["shape"]).copy()
    return out
