import struct

import numpy as np
import pytest

from imuloc.container import read_container, read_csv, write_container, write_csv
from imuloc.errors import (
    ContainerChecksumError,
    ContainerFormatError,
    ContainerTruncatedError,
    ContainerVersionError,
    InputError,
)


def sample_arrays(rng):
    # f8 array carrying a non-default NaN payload to check bit-exactness
    nan_payload = np.frombuffer(struct.pack("<Q", 0x7FF8_0000_DEAD_BEEF), dtype="<f8")
    return {
        "f32": rng.standard_normal(7).astype(np.float32),
        "f64": np.concatenate([rng.standard_normal(5), nan_payload]),
        "i64": rng.integers(-(2**62), 2**62, size=4),
        "c8": (rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))).astype(np.complex64),
        "empty": np.zeros((0, 3)),
    }


def test_round_trip_bit_exact(tmp_path, rng):
    path = tmp_path / "data.ilc"
    arrays = sample_arrays(rng)
    meta = {"kind": "test", "nested": {"a": [1, 2.5]}}
    write_container(path, arrays, meta)
    got, got_meta = read_container(path)
    assert got_meta == meta
    assert set(got) == set(arrays)
    for name, arr in arrays.items():
        assert got[name].dtype == arr.dtype
        assert got[name].shape == arr.shape
        assert got[name].tobytes() == arr.tobytes()


def test_metadata_only_container(tmp_path):
    path = tmp_path / "meta.ilc"
    write_container(path, {}, {"note": "no arrays"})
    arrays, meta = read_container(path)
    assert arrays == {}
    assert meta == {"note": "no arrays"}


def test_header_corruption_detected(tmp_path, rng):
    path = tmp_path / "bad.ilc"
    write_container(path, sample_arrays(rng), {"x": 1})
    data = bytearray(path.read_bytes())
    data[30] ^= 0xFF  # inside the header JSON
    path.write_bytes(bytes(data))
    with pytest.raises(ContainerChecksumError):
        read_container(path)


def test_truncated_file_detected(tmp_path, rng):
    path = tmp_path / "short.ilc"
    write_container(path, sample_arrays(rng), {})
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(ContainerTruncatedError):
        read_container(path)


def test_bad_magic_and_version(tmp_path, rng):
    path = tmp_path / "v.ilc"
    write_container(path, {"a": np.zeros(2)}, {})
    data = bytearray(path.read_bytes())
    bumped = bytearray(data)
    bumped[8:12] = struct.pack("<I", 99)
    path.write_bytes(bytes(bumped))
    with pytest.raises(ContainerVersionError):
        read_container(path)
    data[:8] = b"NOTMYFMT"
    path.write_bytes(bytes(data))
    with pytest.raises(ContainerFormatError):
        read_container(path)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(InputError):
        write_container(tmp_path / "x.ilc", {"a": np.zeros(3, dtype=np.int32)}, {})


def test_csv_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    cols = {"a": np.array([1.5, float("nan"), 0.1 + 0.2]), "b": [1, 2, 3], "name": ["x", "y", "z"]}
    write_csv(path, cols)
    got = read_csv(path)
    assert got["name"] == ["x", "y", "z"]
    assert [int(v) for v in got["b"]] == [1, 2, 3]
    assert float(got["a"][0]) == 1.5
    assert float(got["a"][2]) == 0.1 + 0.2  # shortest-round-trip floats
