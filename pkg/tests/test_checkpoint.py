import numpy as np
import pytest

from dbatlas import models as M
from dbatlas.checkpoint import MAGIC, checkpoint_bytes, load_checkpoint, save_checkpoint
from dbatlas.errors import FormatError


def sample_model():
    model = M.init_model(M.ModelSpec("convlite", 2, 4, (1, 6, 6), 3, init_seed=17))
    model.train_meta = M.TrainMeta("adam", 12, 34, 0.2)
    return model


def test_roundtrip_bitwise(tmp_path):
    model = sample_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.spec == model.spec
    assert np.array_equal(back.params, model.params)
    assert back.train_meta == model.train_meta
    assert M.model_id(back) == M.model_id(model)


def test_bytes_deterministic():
    model = sample_model()
    assert checkpoint_bytes(model) == checkpoint_bytes(model)


def test_magic_prefix(tmp_path):
    model = sample_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    assert raw[:8] == b"DBATLAS1" == MAGIC


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + bytes(100))
    with pytest.raises(FormatError) as err:
        load_checkpoint(path)
    assert err.value.offset == 0


def test_truncated_params_rejected(tmp_path):
    model = sample_model()
    path = tmp_path / "trunc.ckpt"
    path.write_bytes(checkpoint_bytes(model)[:-7])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_truncated_header_rejected(tmp_path):
    path = tmp_path / "tiny.ckpt"
    path.write_bytes(b"DBATLAS1\x00")
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_float32_little_endian_payload(tmp_path):
    model = sample_model()
    raw = checkpoint_bytes(model)
    header_len = int.from_bytes(raw[8:12], "little")
    payload = raw[12 + header_len:]
    assert np.array_equal(np.frombuffer(payload, dtype="<f4"), model.params)
