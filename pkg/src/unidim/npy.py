"""Reader and writer for the NPY array format, versions 1.0 and 2.0.

Implemented directly against the format description: a magic string,
a two-byte version, a little-endian header length (2 bytes for 1.0,
4 bytes for 2.0), a Python-literal header dict padded to a 64-byte
boundary, then raw C-order array data.

Only little-endian float32/float64 C-order arrays are accepted; that is
the entire on-disk vocabulary of this pipeline.
"""

from __future__ import annotations

import ast
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"\x93NUMPY"
_ALLOWED_DESCR = {"<f4": np.float32, "<f8": np.float64}


def read_npy(path: str | Path) -> np.ndarray:
    """Load an array, validating magic, version, header, and payload size."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 10 or raw[:6] != MAGIC:
        raise ValidationError(f"{path}: not an NPY file (bad magic bytes)")
    major, minor = raw[6], raw[7]
    if (major, minor) == (1, 0):
        (header_len,) = struct.unpack("<H", raw[8:10])
        header_start = 10
    elif (major, minor) == (2, 0):
        if len(raw) < 12:
            raise ValidationError(f"{path}: truncated version 2.0 header")
        (header_len,) = struct.unpack("<I", raw[8:12])
        header_start = 12
    else:
        raise ValidationError(f"{path}: unsupported NPY version {major}.{minor}")
    data_start = header_start + header_len
    if len(raw) < data_start:
        raise ValidationError(f"{path}: header length exceeds file size")
    header = raw[header_start:data_start]
    descr, shape = _parse_header(path, header)
    dtype = np.dtype(_ALLOWED_DESCR[descr])
    count = 1
    for dim in shape:
        count *= dim
    expected = count * dtype.itemsize
    payload = raw[data_start:]
    if len(payload) != expected:
        raise ValidationError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"for shape {shape} of {descr}"
        )
    array = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return array.copy()


def _parse_header(path: Path, header: bytes) -> tuple[str, tuple[int, ...]]:
    if not header.endswith(b"\n"):
        raise ValidationError(f"{path}: header is not newline-terminated")
    try:
        text = header.decode("latin-1")
        fields = ast.literal_eval(text.strip())
    except (ValueError, SyntaxError) as exc:
        raise ValidationError(f"{path}: unparsable NPY header") from exc
    if not isinstance(fields, dict):
        raise ValidationError(f"{path}: NPY header is not a dict literal")
    if set(fields) != {"descr", "fortran_order", "shape"}:
        raise ValidationError(f"{path}: unexpected header keys {sorted(fields)}")
    descr = fields["descr"]
    if descr not in _ALLOWED_DESCR:
        raise ValidationError(
            f"{path}: dtype {descr!r} not supported (only <f4 and <f8)"
        )
    if fields["fortran_order"] is not False:
        raise ValidationError(f"{path}: fortran_order must be false")
    shape = fields["shape"]
    if not isinstance(shape, tuple) or not all(
        isinstance(d, int) and d >= 0 for d in shape
    ):
        raise ValidationError(f"{path}: malformed shape {shape!r}")
    return descr, shape


def write_npy(path: str | Path, array: np.ndarray) -> None:
    """Write a float32/float64 array as NPY, version 1.0 unless the header
    cannot fit its two-byte length field."""
    if np.ndim(array) == 0:
        raise ValidationError("refusing to write a 0-d array; wrap it in a shape")
    array = np.ascontiguousarray(array)
    if array.dtype == np.float32:
        descr = "<f4"
    elif array.dtype == np.float64:
        descr = "<f8"
    else:
        raise ValidationError(
            f"refusing to write dtype {array.dtype}; cast to float32 or float64"
        )
    shape_repr = (
        f"({array.shape[0]},)" if array.ndim == 1 else repr(tuple(array.shape))
    )
    header = (
        f"{{'descr': '{descr}', 'fortran_order': False, "
        f"'shape': {shape_repr}, }}"
    ).encode("latin-1")
    prefix_len = len(MAGIC) + 2 + 2
    total = prefix_len + len(header) + 1
    padding = (64 - total % 64) % 64
    header = header + b" " * padding + b"\n"
    if len(header) <= 0xFFFF:
        prefix = MAGIC + bytes([1, 0]) + struct.pack("<H", len(header))
    else:
        # Recompute padding for the 4-byte length field of version 2.0.
        total = len(MAGIC) + 2 + 4 + len(header)
        padding = (64 - total % 64) % 64
        header = header[:-1] + b" " * padding + b"\n"
        prefix = MAGIC + bytes([2, 0]) + struct.pack("<I", len(header))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(prefix)
        handle.write(header)
        handle.write(array.tobytes(order="C"))
