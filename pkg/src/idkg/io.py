"""Artifact plumbing: atomic writes, content hashes, manifests and feature files."""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import IDKGError, ManifestMismatch

MANIFEST = "manifest.json"
FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def require_file(path: str | os.PathLike) -> Path:
    path = Path(path)
    if not path.exists():
        raise IDKGError(f"input not found: {path}")
    return path


def write_manifest(directory: str | os.PathLike, payload: dict, files: list[str]) -> dict:
    """Write ``manifest.json`` recording ``payload`` plus the sha256 of ``files``.

    The manifest's own ``hash`` covers the payload and the file digests, so a
    downstream artifact can pin its inputs by a single string.
    """
    directory = Path(directory)
    body = dict(payload)
    body["files"] = {name: sha256_file(directory / name) for name in files}
    body["hash"] = sha256_bytes(dumps_json(body).encode("utf-8"))
    atomic_write_text(directory / MANIFEST, dumps_json(body))
    return body


def read_manifest(directory: str | os.PathLike, verify: bool = True) -> dict:
    directory = require_file(directory)
    path = require_file(directory / MANIFEST)
    body = json.loads(path.read_text(encoding="utf-8"))
    if verify:
        claimed = body.pop("hash", None)
        if sha256_bytes(dumps_json(body).encode("utf-8")) != claimed:
            raise ManifestMismatch(f"manifest hash does not match its contents: {path}")
        for name, digest in body.get("files", {}).items():
            actual = sha256_file(require_file(directory / name))
            if actual != digest:
                raise ManifestMismatch(f"{directory / name} was modified after its manifest was written")
        body["hash"] = claimed
    return body


# -- feature files ---------------------------------------------------------


def encode_features(ids: list[str], matrix: np.ndarray) -> bytes:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ValueError(f"feature matrix shape {matrix.shape} does not match {len(ids)} ids")
    rows, dim = matrix.shape
    parts = [FEAT_MAGIC, struct.pack("<III", FEAT_VERSION, rows, dim)]
    values = matrix.astype("<f4")
    for i, ident in enumerate(ids):
        raw = ident.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"id too long for feature file: {ident[:40]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(values[i].tobytes())
    return b"".join(parts)


def decode_features(data: bytes) -> tuple[list[str], np.ndarray]:
    if data[:4] != FEAT_MAGIC:
        raise IDKGError("not a feature file (bad magic)")
    version, rows, dim = struct.unpack_from("<III", data, 4)
    if version != FEAT_VERSION:
        raise IDKGError(f"unsupported feature file version {version}")
    offset = 16
    ids: list[str] = []
    out = np.empty((rows, dim), dtype=np.float64)
    width = 4 * dim
    for i in range(rows):
        (n,) = struct.unpack_from("<H", data, offset)
        offset += 2
        ids.append(data[offset:offset + n].decode("utf-8"))
        offset += n
        out[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += width
    if offset != len(data):
        raise IDKGError(f"feature file has {len(data) - offset} trailing bytes")
    return ids, out


def write_features(path: str | os.PathLike, ids: list[str], matrix: np.ndarray) -> None:
    atomic_write_bytes(path, encode_features(ids, matrix))


def read_features(path: str | os.PathLike) -> tuple[list[str], np.ndarray]:
    return decode_features(require_file(path).read_bytes())
