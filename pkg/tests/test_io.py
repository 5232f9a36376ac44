import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from helpers import MICRO
from triplanetok import io
from triplanetok.config import TrainConfig, preset
from triplanetok.diffcore import Tensor
from triplanetok.model import Triplane, init_params, param_shapes, reconstruct_full, tokenize
from triplanetok.train import TrainState


def _planes(h, w, t, d, seed=0):
    rng = np.random.default_rng(seed)
    return Triplane(*(Tensor(rng.standard_normal(s).astype(np.float32))
                      for s in ((1, h, w, d), (1, w, t, d), (1, h, t, d))))


# CVID


def test_cvid_black_pixel_size_and_header(tmp_path):
    path = tmp_path / "a.cvid"
    io.write_cvid(path, np.zeros((1, 1, 1, 3)))
    raw = path.read_bytes()
    assert len(raw) == 24 + 3
    assert raw[:4] == b"CVID"
    assert struct.unpack("<5I", raw[4:24]) == (1, 1, 1, 1, 3)
    assert raw[24:] == b"\x00\x00\x00"


def test_cvid_roundtrip_tolerance_and_idempotence(tmp_path, rng):
    v = rng.random((3, 5, 4, 3))
    path = tmp_path / "v.cvid"
    io.write_cvid(path, v)
    back = io.read_cvid(path)
    assert back.shape == v.shape
    assert np.abs(back - v).max() <= 1 / 510 + 1e-7
    io.write_cvid(path, back)
    assert np.array_equal(io.read_cvid(path), back)


def test_cvid_pixel_rounding():
    q = io.quantize(np.array([0.0, 1 / 255, 0.5, 1.0, 1.5, -0.2]))
    assert q.tolist() == [0, 1, 128, 255, 255, 0]


def test_cvid_errors_are_distinct():
    good = io.encode_cvid(np.zeros((2, 2, 2, 3)))
    with pytest.raises(io.BadMagicError):
        io.decode_cvid(b"XVID" + good[4:])
    with pytest.raises(io.VersionError):
        io.decode_cvid(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(io.TruncatedError):
        io.decode_cvid(good[:-1])
    with pytest.raises(io.TrailingDataError):
        io.decode_cvid(good + b"\x00")
    with pytest.raises(ValueError):
        io.encode_cvid(np.full((1, 1, 1, 3), np.nan))


# CTOK


def test_token_payload_from_published_dims():
    assert io.token_payload_bytes(16, 16, 32, 8) == 40_960
    z = _planes(16, 16, 32, 8)
    assert z.token_count == 1280
    assert len(io.encode_tokens(z)) == 24 + 40_960
    assert _planes(32, 32, 32, 8).token_count == 3072


def test_tokens_roundtrip_bit_exact(tmp_path):
    z = _planes(3, 4, 5, 2, seed=3)
    path = tmp_path / "z.ctok"
    io.write_tokens(path, z)
    back = io.read_tokens(path)
    for a, b in zip(z.planes, back.planes):
        assert a.data.tobytes() == b.data.tobytes()


def test_tokens_decode_identically_after_roundtrip(tmp_path, rng):
    params = init_params(MICRO, 0)
    for p in params.values():
        p.data = (p.data + 0.1 * rng.standard_normal(p.shape)).astype(np.float32)
    z = tokenize(rng.random((4, 8, 8, 3)), params, MICRO)
    path = tmp_path / "z.ctok"
    io.write_tokens(path, z)
    back = io.read_tokens(path, MICRO)
    assert np.array_equal(reconstruct_full(back, params, MICRO), reconstruct_full(z, params, MICRO))


def test_tokens_errors():
    buf = io.encode_tokens(_planes(2, 2, 2, 2))
    with pytest.raises(io.DimMismatchError):
        io.decode_tokens(buf, MICRO.replace(latent_dim=3))
    with pytest.raises(io.TruncatedError):
        io.decode_tokens(buf[:-4])
    with pytest.raises(io.BadMagicError):
        io.decode_tokens(b"CTOX" + buf[4:])
    with pytest.raises(ValueError):
        io.encode_tokens(Triplane(*(Tensor(np.zeros((2,) + p.shape[1:])) for p in _planes(2, 2, 2, 2).planes)))


# CTCK


def test_checkpoint_roundtrip_tiny_bit_equal(tmp_path):
    cfg = preset("tiny")
    params = init_params(cfg, 5)
    path = tmp_path / "c.ctck"
    io.save_checkpoint(path, params, cfg, TrainConfig(lr=3e-4))
    ck = io.load_checkpoint(path)
    assert ck.model == cfg and ck.train.lr == 3e-4
    assert list(ck.params) == list(param_shapes(cfg))
    for k, p in params.items():
        assert ck.params[k].data.tobytes() == p.data.tobytes()


def test_checkpoint_with_optimizer_state(tmp_path, rng):
    params = init_params(MICRO, 1)
    state = TrainState.fresh(TrainConfig())
    state.step = 7
    for k, p in params.items():
        state.opt.m[k] = rng.standard_normal(p.shape).astype(np.float32)
        state.opt.v[k] = rng.random(p.shape).astype(np.float32)
    state.opt.step = 7
    path = tmp_path / "s.ctck"
    io.save_checkpoint(path, params, MICRO, TrainConfig(), state)
    back = io.load_checkpoint(path).train_state()
    assert back.step == 7
    for k in params:
        assert np.array_equal(back.opt.m[k], state.opt.m[k])
        assert np.array_equal(back.opt.v[k], state.opt.v[k])


def _tensor_record(name, arr):
    nb = name.encode()
    return struct.pack("<H", len(nb)) + nb + struct.pack("<BB", 0, arr.ndim) + struct.pack(
        f"<{arr.ndim}I", *arr.shape) + arr.astype("<f4").tobytes()


def _raw_checkpoint(records, cfg=MICRO):
    import json
    blob = json.dumps({"model": cfg.to_dict()}).encode()
    return b"CTCK" + struct.pack("<II", 1, len(blob)) + blob + struct.pack("<I", len(records)) + b"".join(records)


def test_checkpoint_named_errors():
    params = init_params(MICRO, 0)
    recs = [_tensor_record(k, p.data) for k, p in params.items()]
    assert len(io.decode_checkpoint(_raw_checkpoint(recs)).params) == len(params)
    with pytest.raises(io.MissingTensorError, match="enc.pos"):
        io.decode_checkpoint(_raw_checkpoint([r for r, k in zip(recs, params) if k != "enc.pos"]))
    with pytest.raises(io.UnknownTensorError, match="bogus"):
        io.decode_checkpoint(_raw_checkpoint(recs + [_tensor_record("bogus", np.zeros(2))]))
    with pytest.raises(io.DuplicateTensorError):
        io.decode_checkpoint(_raw_checkpoint(recs + recs[:1]))
    bad = [_tensor_record("enc.pos", np.zeros((3, 3))) if k == "enc.pos" else r for r, k in zip(recs, params)]
    with pytest.raises(io.ShapeMismatchError):
        io.decode_checkpoint(_raw_checkpoint(bad))
    with pytest.raises(io.ShapeMismatchError):
        io.decode_checkpoint(_raw_checkpoint(recs), MICRO.replace(enc_dim=16, enc_heads=2))
    with pytest.raises(io.ConfigBlobError):
        io.decode_checkpoint(b"CTCK" + struct.pack("<II", 1, 3) + b"{x}" + struct.pack("<I", 0))
    with pytest.raises(io.MissingTensorError):
        io.encode_checkpoint({}, MICRO)


def test_atomic_write_leaves_no_temp(tmp_path):
    path = tmp_path / "x.bin"
    io.atomic_write(path, b"abc")
    io.atomic_write(path, b"de")
    assert path.read_bytes() == b"de"
    assert [p.name for p in tmp_path.iterdir()] == ["x.bin"]


# fuzzing: truncation and corruption never crash, always a typed error

_SAMPLES = {
    "cvid": (io.encode_cvid(np.linspace(0, 1, 2 * 3 * 2 * 3).reshape(2, 3, 2, 3)), io.decode_cvid),
    "ctok": (io.encode_tokens(_planes(2, 3, 2, 2)), io.decode_tokens),
    "ctck": (io.encode_checkpoint(init_params(MICRO, 0), MICRO, TrainConfig()), io.decode_checkpoint),
}


@pytest.mark.parametrize("kind", sorted(_SAMPLES))
@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(data=st.data())
def test_fuzz_truncation(kind, data):
    buf, decode = _SAMPLES[kind]
    cut = data.draw(st.integers(0, len(buf) - 1))
    with pytest.raises(io.FormatError):
        decode(buf[:cut])


@pytest.mark.parametrize("kind", sorted(_SAMPLES))
@settings(max_examples=80, deadline=None)
@given(data=st.data())
def test_fuzz_corruption(kind, data):
    buf, decode = _SAMPLES[kind]
    b = bytearray(buf)
    # bias corruption toward headers, where structure lives
    limit = min(len(b), 600)
    for _ in range(data.draw(st.integers(1, 4))):
        pos = data.draw(st.integers(0, limit - 1))
        b[pos] = data.draw(st.integers(0, 255))
    try:
        decode(bytes(b))
    except io.FormatError:
        pass
