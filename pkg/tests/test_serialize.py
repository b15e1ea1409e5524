import numpy as np
import pytest

from ebad.dbm import CrDbmParams
from ebad.errors import DataError
from ebad.rbm import RbmParams
from ebad.serialize import MAGIC, dump_model, load_model, parse_model, save_model


def rbm_params():
    rng = np.random.default_rng(1)
    return RbmParams(
        visible_bias=rng.normal(size=5),
        hidden_bias=rng.normal(size=3),
        weights=rng.normal(size=(5, 3)),
    )


def dbm_params():
    rng = np.random.default_rng(2)
    return CrDbmParams(
        a1=rng.normal(size=4), a2=rng.normal(size=4),
        b1=rng.normal(size=2), b2=rng.normal(size=3),
        w1=rng.normal(size=(4, 2)), w2=rng.normal(size=(2, 3)),
        w3=rng.normal(size=(3, 4)),
    )


def test_rbm_round_trip_is_exact(tmp_path):
    params = rbm_params()
    path = tmp_path / "model.ebad"
    save_model(params, path)
    back = load_model(path)
    assert isinstance(back, RbmParams)
    np.testing.assert_array_equal(back.visible_bias, params.visible_bias)
    np.testing.assert_array_equal(back.hidden_bias, params.hidden_bias)
    np.testing.assert_array_equal(back.weights, params.weights)


def test_dbm_round_trip_is_exact(tmp_path):
    params = dbm_params()
    path = tmp_path / "model.ebad"
    save_model(params, path)
    back = load_model(path)
    assert isinstance(back, CrDbmParams)
    for field in ("a1", "a2", "b1", "b2", "w1", "w2", "w3"):
        np.testing.assert_array_equal(getattr(back, field), getattr(params, field))


def test_dump_is_deterministic():
    params = rbm_params()
    assert dump_model(params) == dump_model(params)


def test_file_starts_with_magic(tmp_path):
    path = tmp_path / "model.ebad"
    save_model(rbm_params(), path)
    assert path.read_bytes()[:4] == MAGIC


def test_bad_magic_rejected():
    blob = bytearray(dump_model(rbm_params()))
    blob[:4] = b"NOPE"
    with pytest.raises(DataError):
        parse_model(bytes(blob))


def test_unsupported_version_rejected():
    blob = bytearray(dump_model(rbm_params()))
    blob[4:8] = (99).to_bytes(4, "little")
    with pytest.raises(DataError):
        parse_model(bytes(blob))


def test_unknown_record_type_rejected():
    blob = bytearray(dump_model(rbm_params()))
    blob[8:12] = (77).to_bytes(4, "little")
    with pytest.raises(DataError):
        parse_model(bytes(blob))


def test_truncated_payload_rejected():
    blob = dump_model(rbm_params())
    with pytest.raises(DataError):
        parse_model(blob[:-8])
    with pytest.raises(DataError):
        parse_model(blob[:10])


def test_trailing_garbage_rejected():
    blob = dump_model(rbm_params())
    with pytest.raises(DataError):
        parse_model(blob + b"\x00")


def test_rejects_unserializable_objects():
    with pytest.raises(TypeError):
        dump_model({"not": "a model"})


def test_load_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_model(tmp_path / "absent.ebad")
