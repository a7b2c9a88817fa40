import numpy as np
import pytest

from auxseg.models import (CheckpointError, build, depth_decoder_param_count, forward,
                           load_checkpoint, param_count, save_checkpoint)
from auxseg.tensor import ShapeError, Tensor


def batch(n=2, c=3, h=32, w=48, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(size=(n, c, h, w)))


@pytest.mark.parametrize("kind", ["segnet", "auxnet", "fusenet"])
def test_output_shapes(kind):
    m = build(kind, seed=1)
    out = forward(m, batch(c=m.input_channels))
    assert out["seg_logits"].shape == (2, 4, 32, 48)
    assert out["seg_probs"].shape == (2, 4, 32, 48)
    assert np.allclose(out["seg_probs"].data.sum(axis=1), 1.0, atol=1e-12)
    if kind == "auxnet":
        assert out["depth"].shape == (2, 1, 32, 48)
    else:
        assert "depth" not in out


def test_build_is_deterministic():
    a, b = build("auxnet", seed=4), build("auxnet", seed=4)
    for (ka, pa), (kb, pb) in zip(a.named_parameters().items(), b.named_parameters().items()):
        assert ka == kb and np.array_equal(pa.data, pb.data)
    c = build("auxnet", seed=5)
    assert not np.array_equal(a.layers["enc1"].weight.data, c.layers["enc1"].weight.data)


def test_segnet_and_auxnet_share_seg_path_init():
    s, a = build("segnet", seed=2), build("auxnet", seed=2)
    for k, p in s.named_parameters().items():
        assert np.array_equal(p.data, a.named_parameters()[k].data)


def test_dropping_depth_head_leaves_seg_output_bit_identical():
    m = build("auxnet", seed=3)
    x = batch(seed=9)
    full = forward(m, x)["seg_logits"].data
    lean = forward(m.without_depth(), x)["seg_logits"].data
    assert np.array_equal(full, lean)


def test_rejects_bad_extents_and_channels():
    with pytest.raises(ShapeError):
        build("segnet", height=30)
    with pytest.raises(ValueError):
        build("resnet")
    with pytest.raises(ShapeError):
        forward(build("segnet"), batch(c=4))


def test_param_counts():
    seg, aux, fuse = (build(k) for k in ("segnet", "auxnet", "fusenet"))
    enumerate_count = lambda m: sum(p.size for p in m.parameters())
    assert param_count(seg) == enumerate_count(seg)
    assert param_count(aux, "training") == enumerate_count(aux)
    assert param_count(aux, "inference") == param_count(seg)
    assert param_count(aux, "training") - param_count(aux, "inference") == depth_decoder_param_count(aux)
    assert param_count(fuse) >= 1.8 * param_count(seg)
    assert depth_decoder_param_count(seg) == 0


def test_zero_weights_give_constant_logits():
    m = build("segnet")
    for p in m.parameters():
        p.data[...] = 0.0
    m.layers["seg.head"].bias.data = np.array([0.1, -0.2, 0.3, 0.0])
    logits = forward(m, batch())["seg_logits"].data
    assert np.array_equal(logits, np.broadcast_to([[[[0.1]], [[-0.2]], [[0.3]], [[0.0]]]], logits.shape))


@pytest.mark.parametrize("kind", ["segnet", "auxnet", "fusenet"])
def test_checkpoint_round_trip(tmp_path, kind):
    m = build(kind, seed=11, height=16, width=24)
    path = tmp_path / "m.auxc"
    save_checkpoint(m, path)
    back = load_checkpoint(path, kind=kind)
    assert (back.kind, back.height, back.width) == (kind, 16, 24)
    x = batch(c=m.input_channels, h=16, w=24)
    for k, v in forward(m, x).items():
        assert np.array_equal(v.data, forward(back, x)[k].data)


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.auxc"
    save_checkpoint(build("auxnet", height=16, width=16), path)
    raw = path.read_bytes()
    with pytest.raises(CheckpointError, match="topology mismatch"):
        load_checkpoint(path, kind="segnet")
    (tmp_path / "t.auxc").write_bytes(raw[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.auxc")
    (tmp_path / "x.auxc").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "x.auxc")
    (tmp_path / "m2.auxc").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "m2.auxc")


def test_model_gradients_reach_every_parameter():
    m = build("auxnet", height=16, width=16, seed=1)
    out = forward(m, batch(h=16, w=16))
    (out["seg_logits"].sum() + out["depth"].sum()).backward()
    missing = [k for k, p in m.named_parameters().items() if p.grad is None]
    assert not missing
