"""Binary container shared by VAE and classifier checkpoints.

Layout, in order:

1. the format-version string (e.g. ``latentaug-vae-v1``) followed by ``\\n``;
2. one line of compact UTF-8 JSON metadata followed by ``\\n``. The metadata
   must contain ``"tensors"``: a list of ``{"name": str, "shape": [int, ...]}``
   in declaration order;
3. each tensor's values as little-endian float32, row-major, concatenated in
   declaration order with no padding.

Nothing else follows the last tensor.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import ParseError, VersionError

VAE_FORMAT = "latentaug-vae-v1"
CLF_FORMAT = "latentaug-clf-v1"


def write_container(path, version: str, meta: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    meta = dict(meta)
    meta["tensors"] = [{"name": name, "shape": list(arr.shape)} for name, arr in tensors]
    header = version.encode("ascii") + b"\n"
    header += json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    payload = b"".join(np.asarray(arr, dtype="<f4").tobytes(order="C") for _, arr in tensors)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + payload)
    os.replace(tmp, path)


def read_container(path, version: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a container, returning (metadata, name -> float64 array)."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        if raw and not version.encode("ascii").startswith(raw):
            raise VersionError(f"expected format {version!r}, found {raw[:32]!r}")
        raise ParseError("missing format-version line", len(raw))
    found = raw[:nl].decode("ascii", errors="replace")
    if found != version:
        raise VersionError(f"expected format {version!r}, found {found!r}")
    start = nl + 1
    end = raw.find(b"\n", start)
    if end < 0:
        raise ParseError("unterminated metadata line", len(raw))
    try:
        meta = json.loads(raw[start:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        pos = getattr(exc, "pos", None) or getattr(exc, "start", 0)
        raise ParseError(f"bad metadata: {exc}", start + pos) from None
    specs = meta.get("tensors") if isinstance(meta, dict) else None
    if not isinstance(specs, list):
        raise ParseError("metadata lacks a tensor list", start)

    offset = end + 1
    tensors: dict[str, np.ndarray] = {}
    for spec in specs:
        shape = tuple(int(s) for s in spec["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise ParseError(f"truncated data for tensor {spec['name']!r}", len(raw))
        arr = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset)
        tensors[spec["name"]] = arr.astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise ParseError(f"{len(raw) - offset} trailing bytes after last tensor", offset)
    return meta, tensors
