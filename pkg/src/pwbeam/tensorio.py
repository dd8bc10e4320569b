"""Bit-exact binary containers: named float32 tensors and PGM rendering.

Tensor container layout, little-endian throughout, one or more records
concatenated per file:

    magic   4 bytes  "UBF1"
    version 1 byte   (= 1)
    dtype   1 byte   (0 = IEEE-754 binary32)
    ndim    1 byte
    dims    ndim x 8-byte unsigned
    namelen 2-byte unsigned, then that many UTF-8 name bytes
    payload prod(dims) x 4 bytes, row-major

Record names must be unique within a file. Writes go through a temporary
file and an atomic rename.
"""

import os
import struct
import tempfile

import numpy as np

from .errors import TensorFormatError

MAGIC = b"UBF1"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0


def _encode_record(name: str, values: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(values, dtype="<f4")
    name_bytes = name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise TensorFormatError("record name longer than 65535 bytes")
    header = bytearray()
    header += MAGIC
    header += struct.pack("<BBB", FORMAT_VERSION, DTYPE_FLOAT32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    header += struct.pack("<H", len(name_bytes))
    header += name_bytes
    return bytes(header) + arr.tobytes()


def write_tensors(path, records: dict) -> None:
    """Write named arrays as consecutive records, atomically."""
    names = list(records)
    if len(set(names)) != len(names):
        raise TensorFormatError("duplicate record names")
    blob = b"".join(_encode_record(name, records[name]) for name in names)
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".ubf")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(path, name: str, values) -> None:
    """Write a single named record to ``path``."""
    write_tensors(path, {name: np.asarray(values)})


def read_tensors(path) -> dict:
    """Read every record; validates magic, version, dtype and payload size."""
    with open(path, "rb") as fh:
        blob = fh.read()
    records = {}
    offset = 0
    total = len(blob)
    while offset < total:
        if total - offset < 7:
            raise TensorFormatError("truncated record header")
        if blob[offset : offset + 4] != MAGIC:
            raise TensorFormatError("bad magic; not a tensor container")
        version, dtype_code, ndim = struct.unpack_from("<BBB", blob, offset + 4)
        if version != FORMAT_VERSION:
            raise TensorFormatError(f"unsupported container version {version}")
        if dtype_code != DTYPE_FLOAT32:
            raise TensorFormatError(f"unknown dtype code {dtype_code}")
        offset += 7
        if total - offset < 8 * ndim + 2:
            raise TensorFormatError("truncated record header")
        dims = struct.unpack_from(f"<{ndim}Q", blob, offset)
        offset += 8 * ndim
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if total - offset < name_len:
            raise TensorFormatError("truncated record name")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        count = 1
        for d in dims:
            count *= d
        nbytes = count * 4
        if total - offset < nbytes:
            raise TensorFormatError(f"truncated payload for record '{name}'")
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += nbytes
        if name in records:
            raise TensorFormatError(f"duplicate record name '{name}'")
        records[name] = values.reshape(dims).copy()
    return records


def read_tensor(path, name: str) -> np.ndarray:
    """Read one named record."""
    records = read_tensors(path)
    if name not in records:
        raise TensorFormatError(f"record '{name}' not found in {path}")
    return records[name]


def write_pgm(bmode, path) -> None:
    """Render a B-mode image as binary PGM (P5, maxval 255).

    dB values map linearly: -dynamic_range to byte 0, 0 dB to byte 255,
    with halves rounded up.
    """
    data = np.asarray(bmode.data, dtype=float)
    if data.ndim != 2:
        raise ValueError("B-mode data must be 2-D")
    dr = float(bmode.dynamic_range)
    scaled = (np.clip(data, -dr, 0.0) + dr) / dr
    pixels = np.floor(scaled * 255.0 + 0.5).astype(np.uint8)
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".pgm")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header + pixels.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
