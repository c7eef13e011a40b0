"""Checkpoint container for named tensor collections.

Layout: ASCII magic ``DCASR-CKPT``, one version byte, a newline, then a
text manifest with one line per tensor::

    <name> f64 <dim0> <dim1> ... <byte offset> <byte length>

a blank line, and finally the concatenated raw little-endian IEEE-754
payloads.  Offsets are relative to the end of the blank line.  Round-trips
are bit-exact.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError
from .nn import ParamStore

MAGIC = b"DCASR-CKPT"
VERSION = 1


def save_checkpoint(store: ParamStore, path):
    manifest_lines = []
    payloads = []
    offset = 0
    for name, t in store.items():
        if any(c.isspace() for c in name):
            raise FormatError(f"tensor name {name!r} contains whitespace")
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        dims = " ".join(str(d) for d in t.data.shape)
        dims = dims + " " if dims else ""
        manifest_lines.append(f"{name} f64 {dims}{offset} {len(raw)}")
        payloads.append(raw)
        offset += len(raw)
    body = ("\n".join(manifest_lines) + "\n\n" if manifest_lines else "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(b"\n")
        fh.write(body)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise FormatError("bad magic: not a checkpoint file")
    pos = len(MAGIC)
    if pos >= len(blob) or blob[pos] != VERSION:
        raise FormatError("unsupported checkpoint version")
    pos += 1
    if pos >= len(blob) or blob[pos:pos + 1] != b"\n":
        raise FormatError("malformed header")
    pos += 1
    sep = blob.find(b"\n\n", pos - 1)
    if sep < 0:
        raise FormatError("manifest terminator missing")
    manifest = blob[pos:sep].decode("ascii", errors="strict").splitlines()
    payload = blob[sep + 2:]
    store = ParamStore()
    for line in manifest:
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) < 4 or parts[1] != "f64":
            raise FormatError(f"malformed manifest line: {line!r}")
        name = parts[0]
        try:
            nums = [int(p) for p in parts[2:]]
        except ValueError as e:
            raise FormatError(f"malformed manifest line: {line!r}") from e
        shape, offset, length = tuple(nums[:-2]), nums[-2], nums[-1]
        expected = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if length != expected:
            raise FormatError(
                f"tensor {name!r}: byte length {length} disagrees with shape {shape}"
            )
        if offset < 0 or offset + length > len(payload):
            raise FormatError(f"tensor {name!r}: payload truncated")
        arr = np.frombuffer(payload[offset:offset + length], dtype="<f8").reshape(shape)
        store.add(name, arr.astype(np.float64))
    return store
