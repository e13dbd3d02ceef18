"""
Input/output helpers.

The UQT1 tensor format is the interchange format between any upstream model
and the evaluator:

    bytes 0-3   magic b"UQT1"
    byte  4     dtype code (0=f32, 1=f64, 2=u8, 3=i64)
    byte  5     ndim (1-5)
    8 * ndim    extents, u64 little-endian
    payload     row-major, little-endian

JSON artifacts are written in a canonical form (sorted keys, two-space
indent, trailing newline) so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Tuple, Union

import numpy as np

from src.utils.errors import (
    BadMagic,
    IoFailure,
    ParseError,
    TruncatedPayload,
    UnknownDtype,
    ValidationError,
)


MAGIC = b"UQT1"
HEADER_FIXED = 6
MAX_NDIM = 5

DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
    3: np.dtype("<i8"),
}
_CODE_BY_KIND = {dt.str: code for code, dt in DTYPE_CODES.items()}

PathLike = Union[str, os.PathLike]


@dataclass(frozen=True)
class Tensor:
    """
    A decoded UQT1 tensor. `data` is a read-only numpy array whose shape is
    `dims` and whose dtype is one of the four supported codes.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        validate_array(self.data)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def dtype_code(self) -> int:
        return _CODE_BY_KIND[self.data.dtype.newbyteorder("<").str]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dtype_code == other.dtype_code
            and self.dims == other.dims
            and self.data.tobytes() == other.data.tobytes()
        )

    def __hash__(self) -> int:
        return hash((self.dtype_code, self.dims, self.data.tobytes()))


def validate_array(array: np.ndarray) -> None:
    if array.dtype.newbyteorder("<").str not in _CODE_BY_KIND:
        raise ValidationError(f"unsupported tensor dtype {array.dtype}")
    if array.ndim < 1 or array.ndim > MAX_NDIM:
        raise ValidationError(f"tensor must have 1..{MAX_NDIM} dims, got {array.ndim}")
    if any(d < 1 for d in array.shape):
        raise ValidationError(f"every tensor extent must be >= 1, got {array.shape}")


def encode_tensor(array: np.ndarray) -> bytes:
    """
    Serialise an array to UQT1 bytes. Raises before producing any output if
    the array violates the tensor invariants.
    """

    array = np.asarray(array)
    validate_array(array)
    le = array.astype(array.dtype.newbyteorder("<"), copy=False)
    code = _CODE_BY_KIND[le.dtype.str]
    header = MAGIC + bytes([code, le.ndim]) + struct.pack(f"<{le.ndim}Q", *le.shape)
    return header + np.ascontiguousarray(le).tobytes(order="C")


def decode_tensor(raw: bytes, path: str = None) -> Tensor:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic("missing UQT1 magic header", offset=0, path=path)
    if len(raw) < HEADER_FIXED:
        raise TruncatedPayload("header ends before dtype/ndim bytes", offset=len(raw), path=path)

    code, ndim = raw[4], raw[5]
    if code not in DTYPE_CODES:
        raise UnknownDtype(f"unknown dtype code {code}", offset=4, path=path)
    if ndim < 1 or ndim > MAX_NDIM:
        raise TruncatedPayload(f"ndim {ndim} outside 1..{MAX_NDIM}", offset=5, path=path)

    dims_end = HEADER_FIXED + 8 * ndim
    if len(raw) < dims_end:
        raise TruncatedPayload(
            f"header declares {ndim} extents but file ends early", offset=len(raw), path=path
        )
    dims = struct.unpack(f"<{ndim}Q", raw[HEADER_FIXED:dims_end])
    if any(d < 1 for d in dims):
        raise TruncatedPayload(f"zero extent in dims {list(dims)}", offset=HEADER_FIXED, path=path)

    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.uint64)) * dtype.itemsize
    actual = len(raw) - dims_end
    if actual != expected:
        raise TruncatedPayload(
            f"payload is {actual} bytes, header implies {expected}",
            offset=dims_end + min(actual, expected),
            path=path,
        )

    data = np.frombuffer(raw, dtype=dtype, offset=dims_end).reshape(dims)
    return Tensor(data)


def read_tensor(path: PathLike) -> Tensor:
    """
    Read a UQT1 file. Format errors name the byte offset where decoding failed.
    """

    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read tensor {path}: {exc}") from exc
    return decode_tensor(raw, path=str(path))


def read_array(path: PathLike) -> np.ndarray:
    return read_tensor(path).data


def write_tensor(tensor: Union[Tensor, np.ndarray], path: PathLike) -> None:
    array = tensor.data if isinstance(tensor, Tensor) else tensor
    payload = encode_tensor(array)
    try:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write tensor {path}: {exc}") from exc


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(obj: Any, path: PathLike) -> None:
    try:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(dumps_canonical(obj), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_json(path: PathLike) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def write_text(text: str, path: PathLike) -> None:
    try:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
