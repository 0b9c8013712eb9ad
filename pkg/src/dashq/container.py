"""Binary tensor container (``.dqb``).

Layout::

    u64 little-endian header length N
    N bytes of UTF-8 JSON: {name: {"dtype", "shape", "offset", "nbytes"}}
    payloads, row-major little-endian, each zero-padded to a multiple of 8

The JSON is right-padded with spaces so the payload section starts on an
8-byte boundary; readers accept any N. Offsets are relative to the first
byte after the header. Header keys are
written in insertion order with compact separators so that serialization is
a pure function of the bundle contents.
"""

from __future__ import annotations

import io
import json
import os
import struct
from typing import BinaryIO, Iterator, Mapping

import numpy as np

from .errors import FormatError, ValidationError

DTYPES: dict[str, np.dtype] = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "u8": np.dtype("u1"),
    "i64": np.dtype("<i8"),
}
_ALIGN = 8


def _dtype_name(dtype: np.dtype) -> str:
    for name, dt in DTYPES.items():
        if dt == dtype.newbyteorder("<") or dt == dtype:
            return name
    raise ValidationError(f"unsupported dtype {dtype}; expected one of {sorted(DTYPES)}")


class TensorBundle(Mapping[str, np.ndarray]):
    """An ordered, immutable mapping of names to dense arrays.

    Arrays are copied to little-endian, C-contiguous, read-only storage on
    insertion. Only f32, f64, u8 and i64 are accepted.
    """

    def __init__(self, entries: Mapping[str, np.ndarray] | None = None):
        self._entries: dict[str, np.ndarray] = {}
        for name, arr in (entries or {}).items():
            self._add(name, arr)

    def _add(self, name: str, arr) -> None:
        if not isinstance(name, str) or not name:
            raise ValidationError(f"tensor names must be non-empty strings, got {name!r}")
        if name in self._entries:
            raise ValidationError(f"duplicate tensor name {name!r}")
        arr = np.asarray(arr)
        dt = DTYPES[_dtype_name(arr.dtype)]
        out = np.ascontiguousarray(arr, dtype=dt).copy()
        out.flags.writeable = False
        self._entries[name] = out

    def with_entries(self, entries: Mapping[str, np.ndarray]) -> "TensorBundle":
        """Return a new bundle with ``entries`` appended."""
        new = TensorBundle(self._entries)
        for name, arr in entries.items():
            new._add(name, arr)
        return new

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorBundle):
            return NotImplemented
        if list(self) != list(other):
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in ((self[k], other[k]) for k in self)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}: {_dtype_name(v.dtype)}{list(v.shape)}" for k, v in self.items())
        return f"TensorBundle({{{inner}}})"


def _pad(n: int) -> int:
    return (-n) % _ALIGN


def bundle_to_bytes(bundle: TensorBundle, strict: bool = False) -> bytes:
    """Serialize ``bundle``. With ``strict``, non-finite float entries are rejected."""
    header: dict[str, dict] = {}
    offset = 0
    for name, arr in bundle.items():
        if strict and arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
            raise ValidationError(f"tensor {name!r} contains non-finite values")
        nbytes = arr.nbytes
        header[name] = {
            "dtype": _dtype_name(arr.dtype),
            "shape": [int(s) for s in arr.shape],
            "offset": offset,
            "nbytes": nbytes,
        }
        offset += nbytes + _pad(nbytes)
    head = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    head += b" " * _pad(8 + len(head))
    buf = io.BytesIO()
    buf.write(struct.pack("<Q", len(head)))
    buf.write(head)
    for arr in bundle.values():
        raw = arr.tobytes(order="C")
        buf.write(raw)
        buf.write(b"\x00" * _pad(len(raw)))
    return buf.getvalue()


def bundle_write(bundle: TensorBundle, destination: str | os.PathLike | BinaryIO, strict: bool = False) -> int:
    """Write ``bundle`` to a path or binary stream and return the byte count."""
    data = bundle_to_bytes(bundle, strict=strict)
    if hasattr(destination, "write"):
        destination.write(data)
    else:
        try:
            with open(destination, "wb") as fh:
                fh.write(data)
        except OSError as exc:
            raise ValidationError(f"cannot write bundle to {destination}: {exc}") from exc
    return len(data)


def bundle_from_bytes(data: bytes) -> TensorBundle:
    if len(data) < 8:
        raise FormatError("stream shorter than the 8-byte header length")
    (n,) = struct.unpack_from("<Q", data, 0)
    if 8 + n > len(data):
        raise FormatError(f"header length {n} exceeds stream size {len(data)}")
    try:
        header = json.loads(data[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    base = 8 + n
    entries: dict[str, np.ndarray] = {}
    for name, meta in header.items():
        try:
            dtype_name, shape = meta["dtype"], [int(s) for s in meta["shape"]]
            offset, nbytes = int(meta["offset"]), int(meta["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed header entry for {name!r}") from exc
        if dtype_name not in DTYPES:
            raise FormatError(f"unknown dtype {dtype_name!r} for tensor {name!r}")
        dt = DTYPES[dtype_name]
        if any(s < 0 for s in shape) or offset < 0:
            raise FormatError(f"negative extent or offset for tensor {name!r}")
        expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if expected != nbytes:
            raise FormatError(f"tensor {name!r}: nbytes {nbytes} != shape x dtype size {expected}")
        start = base + offset
        if start + nbytes > len(data):
            raise FormatError(f"tensor {name!r} truncated: needs {start + nbytes} bytes, stream has {len(data)}")
        entries[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize, offset=start).reshape(shape)
    return TensorBundle(entries)


def bundle_read(source: str | os.PathLike | BinaryIO | bytes) -> TensorBundle:
    """Read a bundle from a path, binary stream or bytes object."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bundle_from_bytes(bytes(source))
    if hasattr(source, "read"):
        return bundle_from_bytes(source.read())
    try:
        with open(source, "rb") as fh:
            return bundle_from_bytes(fh.read())
    except OSError as exc:
        raise ValidationError(f"cannot read bundle {source}: {exc}") from exc
