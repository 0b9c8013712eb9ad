"""LSB-first bit packing of low-bit integer codes.

Code ``i`` occupies bits ``[i*bits, (i+1)*bits)`` of the little-endian bit
stream, so codes may straddle byte boundaries (3-bit codes, for instance).
The trailing partial byte is zero in its unused high bits.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def _check_bits(bits: int) -> None:
    if not 1 <= int(bits) <= 8:
        raise ValidationError(f"bits must be in [1, 8], got {bits}")


def pack_codes(codes, bits: int) -> bytes:
    _check_bits(bits)
    codes = np.asarray(codes, dtype=np.int64).ravel()
    if codes.size and (codes.min() < 0 or codes.max() > (1 << bits) - 1):
        raise ValidationError(f"codes out of range for {bits}-bit packing")
    # expand each code to its bits, LSB first, then let packbits regroup by byte
    shifts = np.arange(bits, dtype=np.int64)
    bitstream = ((codes[:, None] >> shifts) & 1).astype(np.uint8).ravel()
    return np.packbits(bitstream, bitorder="little").tobytes()


def unpack_codes(data: bytes, bits: int, count: int) -> np.ndarray:
    """Inverse of :func:`pack_codes`; returns ``count`` codes as uint8."""
    _check_bits(bits)
    need = (count * bits + 7) // 8
    if len(data) < need:
        raise ValidationError(f"need {need} bytes to unpack {count} {bits}-bit codes, got {len(data)}")
    raw = np.frombuffer(bytes(data[:need]), dtype=np.uint8)
    bitstream = np.unpackbits(raw, bitorder="little")[: count * bits].reshape(count, bits)
    weights = (1 << np.arange(bits, dtype=np.uint16)).astype(np.uint16)
    return (bitstream.astype(np.uint16) @ weights).astype(np.uint8)


def packed_size(count: int, bits: int) -> int:
    return (count * bits + 7) // 8
