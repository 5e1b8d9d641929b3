"""Binary container files for checkpoints and datasets.

Layout: an 8-byte magic, an 8-byte little-endian header length, a UTF-8 JSON
header, then the raw data blocks in header-declared order.  Float blocks are
little-endian 64-bit, label blocks little-endian 32-bit integers, so a
save/load round trip is bitwise exact.  Writes go to a temporary file that is
renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .datasets import DatasetSplit

__all__ = [
    "CHECKPOINT_MAGIC",
    "DATASET_MAGIC",
    "FORMAT_VERSION",
    "ContainerError",
    "write_container",
    "read_container",
    "save_dataset",
    "load_dataset",
    "atomic_write_text",
]

CHECKPOINT_MAGIC = b"BAYADCKP"
DATASET_MAGIC = b"BAYADDAT"
FORMAT_VERSION = 1

_DTYPES = {"f8": np.dtype("<f8"), "i4": np.dtype("<i4")}


class ContainerError(ValueError):
    """Malformed or mismatched container file."""


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path: str | Path, magic: bytes, header: dict, blocks: list[np.ndarray]) -> None:
    declared = header.get("blocks")
    if declared is None or len(declared) != len(blocks):
        raise ContainerError("header must declare exactly the blocks being written")
    payload = bytearray()
    for decl, arr in zip(declared, blocks):
        dtype = _DTYPES[decl["dtype"]]
        if tuple(decl["shape"]) != arr.shape:
            raise ContainerError(f"block {decl['name']} shape disagrees with its declaration")
        payload += np.ascontiguousarray(arr, dtype=dtype).tobytes()
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(magic)
            fh.write(struct.pack("<Q", len(header_bytes)))
            fh.write(header_bytes)
            fh.write(bytes(payload))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path: str | Path, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as fh:
        got_magic = fh.read(8)
        if got_magic != magic:
            raise ContainerError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ContainerError(
                f"{path}: format_version {header.get('format_version')} unsupported"
            )
        blocks = []
        for decl in header["blocks"]:
            dtype = _DTYPES[decl["dtype"]]
            shape = tuple(decl["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ContainerError(f"{path}: truncated block {decl['name']}")
            blocks.append(np.frombuffer(raw, dtype=dtype).reshape(shape).copy())
    return header, blocks


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------


def save_dataset(path: str | Path, split: DatasetSplit) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "name": split.name,
        "spec": split.spec,
        "n_classes": split.n_classes,
        "data_range": list(split.data_range) if split.data_range else None,
        "blocks": [
            {"name": "x", "shape": list(split.x.shape), "dtype": "f8"},
            {"name": "y", "shape": list(split.y.shape), "dtype": "i4"},
        ],
    }
    write_container(path, DATASET_MAGIC, header, [split.x, split.y])


def load_dataset(path: str | Path) -> DatasetSplit:
    header, blocks = read_container(path, DATASET_MAGIC)
    x, y = blocks
    rng = header.get("data_range")
    return DatasetSplit(
        x=x,
        y=y.astype(np.int64),
        name=header["name"],
        spec=header["spec"],
        n_classes=header["n_classes"],
        data_range=tuple(rng) if rng else None,
    )
