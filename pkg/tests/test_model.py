import struct

import numpy as np
import pytest

from beast.encoder import BlockConfig, TrainContext
from beast.model import ModelConfig, init_params, model_forward, param_shapes, toy_config
from beast.weights import (
    WeightMagicError,
    WeightMissingTensorError,
    WeightShapeError,
    WeightTruncatedError,
    load_weights,
    save_weights,
)


@pytest.fixture(scope="module")
def toy():
    cfg = toy_config(n_layers=2, d_model=16, n_heads=2, d_ffn=32, channels=(4, 6, 8))
    return init_params(cfg, seed=1)


def test_paper_scale_parameter_count():
    cfg = ModelConfig()  # 9 layers, d=256, 8 heads, ffn=1024, default front-end
    total = sum(int(np.prod(s)) for s in param_shapes(cfg).values())
    assert abs(total - 7_500_000) / 7_500_000 < 0.20, f"{total} parameters"


def test_forward_shapes_and_ranges(toy):
    rng = np.random.default_rng(0)
    feats = rng.uniform(0, 2, (40, 128)).astype(np.float32)
    beat, down, tempo = model_forward(feats, toy, BlockConfig(8, 4, 4))
    assert beat.shape == (40,)
    assert down.shape == (40,)
    assert tempo.shape == (toy.cfg.n_tempo_bins,)
    assert np.all((beat.data >= 0) & (beat.data <= 1))
    assert np.all((down.data >= 0) & (down.data <= 1))


def test_infer_mode_deterministic(toy):
    rng = np.random.default_rng(1)
    feats = rng.uniform(0, 2, (30, 128)).astype(np.float32)
    b1, d1, t1 = model_forward(feats, toy, BlockConfig(8, 4, 4))
    b2, d2, t2 = model_forward(feats, toy, BlockConfig(8, 4, 4))
    assert np.array_equal(b1.data, b2.data)
    assert np.array_equal(d1.data, d2.data)
    assert np.array_equal(t1.data, t2.data)


def test_train_mode_dropout_changes_with_step(toy):
    rng = np.random.default_rng(2)
    feats = rng.uniform(0, 2, (20, 128)).astype(np.float32)
    bc = BlockConfig(8, 4, 4)
    a = model_forward(feats, toy, bc, TrainContext(seed=7, step=0))[0].data
    b = model_forward(feats, toy, bc, TrainContext(seed=7, step=0))[0].data
    c = model_forward(feats, toy, bc, TrainContext(seed=7, step=1))[0].data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_forward_causality_beyond_right_context(toy):
    rng = np.random.default_rng(3)
    feats = rng.uniform(0, 2, (24, 128)).astype(np.float32)
    bc = BlockConfig(8, 4, 2)
    base = model_forward(feats, toy, bc)[0].data
    # block 0: center [0,4), right context to frame 6; frames >= 6 are free
    pert = feats.copy()
    pert[6:] += rng.uniform(0, 1, (18, 128)).astype(np.float32)
    got = model_forward(pert, toy, bc)[0].data
    assert np.array_equal(base[:4], got[:4])


# ---------------------------------------------------------------------------
# serialization


def test_weights_roundtrip_bit_exact(tmp_path, toy):
    path = tmp_path / "m.wt"
    save_weights(toy, path)
    back = load_weights(path)
    assert back.cfg == toy.cfg
    for name, t in toy.tensors.items():
        assert np.array_equal(back.tensors[name].data, t.data), name


def test_weights_magic_error(tmp_path, toy):
    path = tmp_path / "m.wt"
    save_weights(toy, path)
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(WeightMagicError):
        load_weights(path)


def test_weights_shape_error(tmp_path, toy):
    path = tmp_path / "m.wt"
    save_weights(toy, path)
    raw = path.read_bytes()
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = raw[12:12 + hlen].decode()
    # corrupt one declared shape, keeping the header byte length identical
    bad = header.replace('"head.beat.w", "dtype": "f32", "shape": [16, 1]',
                         '"head.beat.w", "dtype": "f32", "shape": [61, 1]')
    assert bad != header
    path.write_bytes(raw[:12] + bad.encode() + raw[12 + hlen:])
    with pytest.raises(WeightShapeError):
        load_weights(path)


def test_weights_truncated_error(tmp_path, toy):
    path = tmp_path / "m.wt"
    save_weights(toy, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-9])
    with pytest.raises(WeightTruncatedError):
        load_weights(path)


def test_weights_missing_tensor_error(tmp_path, toy):
    path = tmp_path / "m.wt"
    save_weights(toy, path)
    raw = path.read_bytes()
    (hlen,) = struct.unpack_from("<I", raw, 8)
    import json

    header = json.loads(raw[12:12 + hlen])
    dropped = header["tensors"].pop()  # last tensor: head.tempo.b
    blob = json.dumps(header).encode()
    body = raw[12 + hlen:len(raw) - dropped["shape"][0] * 4]
    path.write_bytes(raw[:8] + struct.pack("<I", len(blob)) + blob + body)
    with pytest.raises(WeightMissingTensorError) as exc:
        load_weights(path)
    assert "head.tempo.b" in str(exc.value)


def test_errors_are_distinct_classes():
    kinds = {WeightMagicError, WeightShapeError, WeightTruncatedError, WeightMissingTensorError}
    assert len(kinds) == 4
    for a in kinds:
        for b in kinds:
            if a is not b:
                assert not issubclass(a, b)
