"""Self-describing binary container for named arrays.

Layout::

    MAGIC (8 bytes) | header length (uint64 LE) | header JSON (utf-8) | payload

The header lists, per section, every array's name, dtype, shape, offset
and byte length, plus a free-form text manifest. Payloads are raw
little-endian ``<f8`` (or ``<i8`` for index arrays). Output is a pure
function of the inputs, so identical states give identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TGCKPT01"
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


class CheckpointError(ValueError):
    pass


def _kind(a: np.ndarray) -> str:
    return "i8" if np.issubdtype(a.dtype, np.integer) or a.dtype == bool else "f8"


def dumps(sections: dict[str, dict[str, np.ndarray]], manifest: str = "") -> bytes:
    entries = []
    chunks = []
    offset = 0
    for section in sorted(sections):
        for name in sorted(sections[section]):
            arr = np.asarray(sections[section][name])
            kind = _kind(arr)
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes()
            entries.append({"section": section, "name": name, "dtype": kind,
                            "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    header = json.dumps({"entries": entries, "manifest": manifest}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, dict[str, np.ndarray]], str]:
    if blob[:8] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:8]!r}; expected {MAGIC!r}")
    if len(blob) < 16:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"corrupt checkpoint header: {err}") from None
    base = 16 + hlen
    sections: dict[str, dict[str, np.ndarray]] = {}
    for e in header["entries"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(blob):
            raise CheckpointError(f"truncated payload for {e['section']}/{e['name']}")
        arr = np.frombuffer(blob[start:start + e["nbytes"]], dtype=_DTYPES[e["dtype"]])
        sections.setdefault(e["section"], {})[e["name"]] = arr.reshape(e["shape"]).copy()
    return sections, header["manifest"]


def save(path, sections: dict[str, dict[str, np.ndarray]], manifest: str = "") -> None:
    Path(path).write_bytes(dumps(sections, manifest))


def load(path) -> tuple[dict[str, dict[str, np.ndarray]], str]:
    return loads(Path(path).read_bytes())
