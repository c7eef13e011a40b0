import numpy as np
import pytest

from dcasr.checkpoint import load_checkpoint, save_checkpoint
from dcasr.errors import FormatError
from dcasr.nn import ParamStore
from dcasr.rng import substream


def make_store():
    s = ParamStore()
    rng = substream(0, "ckpt")
    s.add("emb", rng.normal(size=(5, 3)))
    s.add("bias", rng.normal(size=3))
    s.add("scalar", np.array(3.14159))
    return s


def test_round_trip_bitwise(tmp_path):
    store = make_store()
    path = tmp_path / "a.ckpt"
    save_checkpoint(store, path)
    loaded = load_checkpoint(path)
    assert loaded.names() == store.names()
    for name, t in store.items():
        assert np.array_equal(loaded[name].data, t.data)
        assert loaded[name].data.tobytes() == t.data.tobytes()


def test_double_save_identical_bytes(tmp_path):
    store = make_store()
    save_checkpoint(store, tmp_path / "a")
    save_checkpoint(store, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_empty_store_round_trip(tmp_path):
    path = tmp_path / "empty.ckpt"
    save_checkpoint(ParamStore(), path)
    assert len(load_checkpoint(path)) == 0


def test_corrupt_manifest_byte(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(make_store(), path)
    blob = bytearray(path.read_bytes())
    # flip a digit inside the first manifest line's byte-length field
    manifest_start = blob.index(b"\n", len(b"DCASR-CKPT") + 1) + 1
    line_end = blob.index(b"\n", manifest_start)
    line = blob[manifest_start:line_end].decode()
    parts = line.split(" ")
    parts[-1] = str(int(parts[-1]) + 8)
    blob[manifest_start:line_end] = " ".join(parts).encode()
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.ckpt"
    save_checkpoint(make_store(), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(b"NOTACKPT\x01\n\n")
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)
