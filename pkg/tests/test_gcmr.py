import numpy as np
import pytest

from genrecmr.gcmr import (GcmrError, decode_array, encode_array, read_checkpoint_file,
                           read_gcmr, write_checkpoint_file, write_gcmr, write_pgm)


@pytest.mark.parametrize("dtype", ["float32", "complex64", "float64"])
def test_array_round_trip_is_byte_exact(tmp_path, dtype):
    rng = np.random.default_rng(0)
    arr = rng.normal(0, 1, size=(3, 5, 7)).astype(dtype)
    if dtype == "complex64":
        arr = (arr + 1j * rng.normal(0, 1, size=arr.shape)).astype(dtype)
    path = tmp_path / "a.gcmr"
    write_gcmr(path, arr)
    back = read_gcmr(path)
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()
    # re-encoding the decoded array reproduces the file bytes
    assert encode_array(back) == path.read_bytes()


def test_header_layout_is_as_documented():
    arr = np.zeros((2, 3), dtype=np.float32)
    buf = encode_array(arr)
    assert buf[:5] == b"GCMR1"
    assert buf[5] == 1          # version
    assert buf[6] == 0          # float32 code
    assert buf[7] == 2          # ndim
    assert int.from_bytes(buf[8:12], "little") == 2
    assert int.from_bytes(buf[12:16], "little") == 3
    assert len(buf) == 16 + 2 * 3 * 4


def test_unsupported_dtype_rejected():
    with pytest.raises(GcmrError):
        encode_array(np.zeros(4, dtype=np.int32))


def test_bad_magic_rejected():
    buf = bytearray(encode_array(np.zeros(3, dtype=np.float32)))
    buf[0:5] = b"WRONG"
    with pytest.raises(GcmrError, match="magic"):
        decode_array(bytes(buf))


def test_truncated_payload_rejected():
    buf = encode_array(np.arange(6, dtype=np.float64))
    with pytest.raises(GcmrError):
        decode_array(buf[:-1])
    with pytest.raises(GcmrError):
        decode_array(buf[:7])


def test_trailing_bytes_rejected():
    buf = encode_array(np.arange(6, dtype=np.float64))
    with pytest.raises(GcmrError, match="trailing"):
        decode_array(buf + b"\x00")


def test_scalar_arrays_round_trip():
    buf = encode_array(np.float64(3.25))
    back = decode_array(buf)
    assert back.shape == ()
    assert back == 3.25


# ------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_and_stable_bytes(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {
        "gen/w": rng.normal(0, 1, size=(2, 2)).astype(np.float64),
        "bank/0/1/0": rng.normal(0, 1, size=4).astype(np.float64),
        "gen/b": rng.normal(0, 1, size=2).astype(np.float32),
    }
    meta = {"kind": "test", "epoch": 3}
    p1, p2 = tmp_path / "a.gckp", tmp_path / "b.gckp"
    write_checkpoint_file(p1, arrays, meta)
    back_arrays, back_meta = read_checkpoint_file(p1)
    assert back_meta == meta
    assert set(back_arrays) == set(arrays)
    for name in arrays:
        assert np.array_equal(back_arrays[name], arrays[name])
        assert back_arrays[name].dtype == arrays[name].dtype
    # write -> read -> write must be byte identical
    write_checkpoint_file(p2, back_arrays, back_meta)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_byte_layout_independent_of_dict_order(tmp_path):
    a = {"x": np.ones(2, dtype=np.float32), "y": np.zeros(2, dtype=np.float32)}
    b = dict(reversed(list(a.items())))
    pa, pb = tmp_path / "a.gckp", tmp_path / "b.gckp"
    write_checkpoint_file(pa, a, {})
    write_checkpoint_file(pb, b, {})
    assert pa.read_bytes() == pb.read_bytes()


def test_checkpoint_wrong_magic_rejected(tmp_path):
    p = tmp_path / "bad.gckp"
    write_checkpoint_file(p, {"x": np.ones(1, dtype=np.float32)}, {})
    raw = bytearray(p.read_bytes())
    raw[0:5] = b"NOTCK"
    p.write_bytes(bytes(raw))
    with pytest.raises(GcmrError, match="magic"):
        read_checkpoint_file(p)


def test_checkpoint_truncation_rejected(tmp_path):
    p = tmp_path / "t.gckp"
    write_checkpoint_file(p, {"x": np.ones(8, dtype=np.float64)}, {"k": 1})
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) - 5])
    with pytest.raises(GcmrError):
        read_checkpoint_file(p)


# ------------------------------------------------------------------- pgm

def test_pgm_16bit_header_and_scaling(tmp_path):
    img = np.array([[0.0, 0.5], [1.0, 2.0]])
    p = tmp_path / "x.pgm"
    write_pgm(p, img, bits=16)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n2 2\n65535\n")
    pix = np.frombuffer(raw[len(b"P5\n2 2\n65535\n"):], dtype=">u2").reshape(2, 2)
    # peak (2.0) maps to full range; the rest scale linearly
    assert pix[1, 1] == 65535
    assert pix[0, 0] == 0
    assert pix[1, 0] == round(65535 / 2)
    assert pix[0, 1] == round(65535 / 4)


def test_pgm_8bit(tmp_path):
    img = np.linspace(0, 1, 12).reshape(3, 4)
    p = tmp_path / "x8.pgm"
    write_pgm(p, img, bits=8)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n")
    assert len(raw) == len(b"P5\n4 3\n255\n") + 12


def test_pgm_all_zero_image_stays_zero(tmp_path):
    p = tmp_path / "z.pgm"
    write_pgm(p, np.zeros((2, 2)), bits=8)
    assert p.read_bytes().endswith(b"\x00" * 4)


def test_pgm_rejects_bad_bits_and_shape(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "a.pgm", np.zeros((2, 2)), bits=12)
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "b.pgm", np.zeros(4))
