import io
import json
import struct

import numpy as np
import pytest

from dashq.container import TensorBundle, bundle_from_bytes, bundle_read, bundle_to_bytes, bundle_write
from dashq.errors import FormatError, ValidationError


def random_bundle(rng, n=5):
    makers = [
        lambda s: rng.standard_normal(s).astype(np.float32),
        lambda s: rng.standard_normal(s),
        lambda s: rng.integers(0, 256, s).astype(np.uint8),
        lambda s: rng.integers(-(2**40), 2**40, s).astype(np.int64),
    ]
    entries = {}
    for i in range(n):
        shape = tuple(int(x) for x in rng.integers(0, 5, rng.integers(0, 4)))
        entries[f"t{i}/ü"] = makers[i % 4](shape)
    return TensorBundle(entries)


def test_empty_bundle():
    data = bundle_to_bytes(TensorBundle())
    (n,) = struct.unpack_from("<Q", data)
    assert data[8 : 8 + n].strip() == b"{}"
    assert len(data) == 16  # 8 + "{}" padded to the 8-byte boundary
    assert bundle_from_bytes(data) == TensorBundle()


def test_header_nbytes_for_2x2_f32():
    data = bundle_to_bytes(TensorBundle({"w": np.zeros((2, 2), np.float32)}))
    (n,) = struct.unpack_from("<Q", data)
    header = json.loads(data[8 : 8 + n])
    assert header["w"] == {"dtype": "f32", "shape": [2, 2], "offset": 0, "nbytes": 16}


def test_hand_built_u8_file():
    head = b'{"name":{"dtype":"u8","shape":[3],"offset":0,"nbytes":3}}'
    data = struct.pack("<Q", len(head)) + head + bytes([1, 2, 3])
    b = bundle_from_bytes(data)
    assert list(b) == ["name"]
    assert b["name"].dtype == np.uint8
    assert b["name"].tolist() == [1, 2, 3]


@pytest.mark.parametrize("seed", range(10))
def test_round_trip_and_fixed_point(seed):
    rng = np.random.default_rng(seed)
    b = random_bundle(rng)
    data = bundle_to_bytes(b)
    back = bundle_read(data)
    assert back == b
    assert bundle_to_bytes(back) == data


def test_payload_alignment(rng):
    b = TensorBundle({"a": np.arange(3, dtype=np.uint8), "b": np.ones(1), "c": np.arange(5, dtype=np.uint8)})
    data = bundle_to_bytes(b)
    (n,) = struct.unpack_from("<Q", data)
    assert (8 + n) % 8 == 0
    header = json.loads(data[8 : 8 + n])
    assert [header[k]["offset"] for k in "abc"] == [0, 8, 16]
    assert len(data) == 8 + n + 24
    assert data[8 + n + 3 : 8 + n + 8] == b"\x00" * 5


def test_file_and_stream_io(tmp_path, rng):
    b = random_bundle(rng)
    path = tmp_path / "x.dqb"
    written = bundle_write(b, path)
    assert path.stat().st_size == written
    assert bundle_read(path) == b
    buf = io.BytesIO()
    bundle_write(b, buf)
    buf.seek(0)
    assert bundle_read(buf) == b


def test_truncated_payload():
    data = bundle_to_bytes(TensorBundle({"w": np.ones(4)}))
    with pytest.raises(FormatError, match="truncated"):
        bundle_from_bytes(data[:-1])


def test_nbytes_exceeding_file():
    head = b'{"x":{"dtype":"u8","shape":[64],"offset":0,"nbytes":64}}'
    with pytest.raises(FormatError):
        bundle_from_bytes(struct.pack("<Q", len(head)) + head + b"\x00" * 10)


def test_header_payload_mismatch():
    head = b'{"x":{"dtype":"f32","shape":[2],"offset":0,"nbytes":4}}'
    with pytest.raises(FormatError, match="nbytes"):
        bundle_from_bytes(struct.pack("<Q", len(head)) + head + b"\x00" * 8)


def test_unknown_dtype():
    head = b'{"x":{"dtype":"f16","shape":[1],"offset":0,"nbytes":2}}'
    with pytest.raises(FormatError, match="dtype"):
        bundle_from_bytes(struct.pack("<Q", len(head)) + head + b"\x00" * 8)


def test_header_length_beyond_stream():
    with pytest.raises(FormatError):
        bundle_from_bytes(struct.pack("<Q", 100) + b"{}")


def test_strict_rejects_non_finite():
    b = TensorBundle({"w": np.array([1.0, np.nan], np.float32)})
    bundle_to_bytes(b)
    with pytest.raises(ValidationError):
        bundle_to_bytes(b, strict=True)


def test_unsupported_dtype_and_duplicates():
    with pytest.raises(ValidationError):
        TensorBundle({"h": np.zeros(2, np.float16)})
    b = TensorBundle({"a": np.zeros(1)})
    with pytest.raises(ValidationError):
        b.with_entries({"a": np.zeros(1)})


def test_big_endian_input_is_normalized():
    arr = np.arange(4, dtype=">f4")
    b = TensorBundle({"x": arr})
    assert b["x"].dtype == np.dtype("<f4")
    assert bundle_read(bundle_to_bytes(b))["x"].tolist() == [0, 1, 2, 3]
