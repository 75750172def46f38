import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgedepth import tensor as T
from edgedepth.config import load_config
from edgedepth.errors import ConfigError, FormatError, ShapeError
from edgedepth.gradcheck import grad_check
from edgedepth.losses import silog_loss
from edgedepth.model import (
    ASPP,
    EAM,
    DepthNet,
    Encoder,
    FPNDecoder,
    ModelConfig,
    aspp_forward,
    decoder_forward,
    eam_concat,
    eam_edge_stage,
    encoder_forward,
    model_forward,
    sam_forward,
)
from edgedepth.nn import decode_weights, encode_weights, load_weights, save_weights
from edgedepth.tensor import Tensor

from oracles import em_oracle


def _zero(module):
    for p in module.parameters():
        p.data[...] = 0.0


def test_encoder_shapes_desk():
    enc = Encoder((4, 8, 16, 32, 64), np.random.default_rng(0))
    maps = encoder_forward(Tensor(np.random.default_rng(1).normal(size=(3, 64, 64))), enc)
    assert [m.shape for m in maps] == [(8, 16, 16), (16, 8, 8), (32, 4, 4), (64, 2, 2)]


def test_encoder_zero_input_zero_bias_gives_zero():
    enc = Encoder((4, 8, 16, 32, 64), np.random.default_rng(0))
    assert all(np.all(m.data == 0) for m in enc(Tensor(np.zeros((3, 64, 64)))))


def test_encoder_rejects_bad_extents():
    enc = Encoder((4, 8, 16, 32, 64), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        encoder_forward(Tensor(np.zeros((3, 48, 64))), enc)


def test_encoder_deterministic():
    x = Tensor(np.random.default_rng(2).normal(size=(3, 64, 64)))
    a = Encoder((4, 8, 16, 32, 64), np.random.default_rng(5))(x)
    b = Encoder((4, 8, 16, 32, 64), np.random.default_rng(5))(x)
    assert all(np.array_equal(u.data, v.data) for u, v in zip(a, b))


@pytest.mark.parametrize("preset,n_p", [("nyu", 300), ("kitti", 418)])
def test_patch_counts_full_shape(preset, n_p):
    cfg = load_config(preset=preset).model
    _, state = DepthNet(cfg).forward_with_state(Tensor(np.random.default_rng(0).random((3, cfg.input_h, cfg.input_w))))
    assert state.n_patches == {"f_g": n_p, "pem8": n_p, "pem16": n_p}


def test_patch_counts_desk():
    _, state = DepthNet(load_config(preset="desk").model).forward_with_state(Tensor(np.zeros((3, 64, 64))))
    assert state.n_patches == {"f_g": 4, "pem8": 4, "pem16": 4}


@given(st.integers(1, 5), st.integers(1, 5))
def test_patch_count_formula(gh, gw):
    cfg = ModelConfig(input_h=32 * gh, input_w=32 * gw, k=1, encoder_widths=(2, 2, 2, 2, 2), pem_cf=2, pem_ce=2, pem_co8=2, pem_co16=2, decoder_channels=2)
    if gh * gw < 2:
        with pytest.raises(ConfigError):
            cfg.validate()
        return
    _, state = DepthNet(cfg).forward_with_state(Tensor(np.zeros((3, cfg.input_h, cfg.input_w))))
    assert set(state.n_patches.values()) == {gh * gw} == {cfg.n_patches}


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(input_h=60).validate()
    with pytest.raises(ConfigError):
        ModelConfig(encoder_widths=(8, 16, 24, 32, 47)).validate()
    with pytest.raises(ConfigError):
        ModelConfig(max_depth=0).validate()
    with pytest.raises(ConfigError):
        ModelConfig(k=4).validate()


def test_eam_concat_shapes_and_order():
    f_g = Tensor(np.arange(16.0).reshape(4, 4))
    x = eam_concat(f_g, Tensor(np.ones((2, 4))), Tensor(np.zeros((2, 4))))
    assert x.shape == (8, 4)
    np.testing.assert_array_equal(x.data[:4], f_g.data)
    assert np.all(eam_concat(Tensor(np.zeros((4, 4))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4)))).data == 0)
    with pytest.raises(ShapeError):
        eam_concat(f_g, Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


def test_eam_edge_stage_rows_and_prefix():
    rng = np.random.default_rng(4)
    eam = EAM(8, rng)
    x_r, x_xi = eam_edge_stage(Tensor(rng.normal(size=(8, 5))), 2, eam)
    assert x_r.shape == (4, 5) and x_xi.shape == (8, 5)
    np.testing.assert_array_equal(x_xi.data[:4], x_r.data)


def test_eam_edge_stage_two_patches_matches_oracle():
    rng = np.random.default_rng(8)
    eam = EAM(6, rng)
    x = rng.normal(size=(6, 2))
    x_r, x_xi = eam_edge_stage(Tensor(x), 1, eam)
    r = np.maximum(eam.reduce.weight.data @ x + eam.reduce.bias.data, 0) + 0.2 * np.minimum(eam.reduce.weight.data @ x + eam.reduce.bias.data, 0)
    np.testing.assert_allclose(x_r.data, r, atol=1e-13)
    np.testing.assert_allclose(x_xi.data[3:], em_oracle(r, 1, eam.em), atol=1e-12)


def test_eam_odd_channels():
    with pytest.raises(ConfigError):
        EAM(7, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        eam_edge_stage(Tensor(np.zeros((7, 3))), 1, EAM(8, np.random.default_rng(0)))


def test_sam_single_patch_is_residual_plus_value():
    rng = np.random.default_rng(9)
    eam = EAM(6, rng)
    x = Tensor(rng.normal(size=(6, 1)))
    x_att, attn, (_, _, x_v) = sam_forward(x, eam)
    assert attn.data.shape == (1, 1) and attn.data[0, 0] == 1.0
    np.testing.assert_allclose(x_att.data, x.data + x_v.data, atol=1e-12)


def test_sam_zero_value_path_is_identity():
    rng = np.random.default_rng(10)
    eam = EAM(4, rng)
    _zero(eam.mlp_v)
    x = Tensor(rng.normal(size=(4, 5)))
    np.testing.assert_array_equal(sam_forward(x, eam)[0].data, x.data)


def test_sam_hand_computed_two_by_two():
    eam = EAM(2, np.random.default_rng(0))
    for lin in (eam.mlp_k, eam.mlp_q, eam.mlp_v):
        lin.weight.data[...] = np.eye(2)
        lin.bias.data[...] = 0
    x_att, attn, _ = sam_forward(Tensor([[1.0, 2.0], [0.0, 1.0]]), eam)
    # softmax([1, 2]/sqrt 2) and softmax([2, 5]/sqrt 2), evaluated by hand
    np.testing.assert_allclose(attn.data, [[0.33023845067334306, 0.6697615493266569], [0.10704180146517042, 0.8929581985348295]], atol=1e-14)
    np.testing.assert_allclose(x_att.data, [[2.669761549326657, 3.8929581985348296], [0.6697615493266569, 1.8929581985348296]], atol=1e-14)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(12)
    for _ in range(20):
        eam = EAM(6, rng)
        _, attn, _ = sam_forward(Tensor(rng.normal(size=(6, int(rng.integers(1, 12)))) * 5), eam)
        np.testing.assert_allclose(attn.data.sum(1), 1.0, atol=1e-9)


def test_aspp_constant_input_gives_constant_output():
    rng = np.random.default_rng(13)
    aspp = ASPP(3, 2, 4, (1, 2, 3), rng)
    aspp.fuse.bias.data[...] = rng.normal(size=aspp.fuse.bias.shape)
    c = np.array([0.5, -1.0, 2.0])
    out = aspp_forward(Tensor(np.broadcast_to(c[:, None, None], (3, 3, 2)).copy()), aspp).data
    leaky = lambda v: np.where(v > 0, v, 0.2 * v)
    branches = [leaky(aspp.conv1x1.weight.data[:, :, 0, 0] @ c)]
    branches += [leaky(conv.weight.data.sum(axis=(2, 3)) @ c) for conv in aspp.dilated]
    branches += [leaky(aspp.pool.weight.data @ c)]
    expect = leaky(aspp.fuse.weight.data[:, :, 0, 0] @ np.concatenate(branches) + aspp.fuse.bias.data)
    np.testing.assert_allclose(out, np.broadcast_to(expect[:, None, None], out.shape), atol=1e-13)


def test_aspp_degenerate_is_plain_conv():
    rng = np.random.default_rng(14)
    aspp = ASPP(2, 3, 3, (1,), rng, use_1x1=False, use_pool=False)
    x = Tensor(rng.normal(size=(2, 4, 5)))
    conv = aspp.dilated[0]
    ref = T.leaky_relu(aspp.fuse(T.leaky_relu(T.conv2d(x, conv.weight, conv.bias, padding=1, padding_mode="replicate"))))
    np.testing.assert_array_equal(aspp_forward(x, aspp).data, ref.data)


def test_aspp_hand_checked_two_by_two():
    aspp = ASPP(1, 1, 1, (1, 2), np.random.default_rng(0), use_1x1=False, use_pool=False)
    for conv in aspp.dilated:
        conv.weight.data[...] = 1.0
        conv.bias.data[...] = 0.0
    aspp.fuse.weight.data[...] = np.array([1.0, 0.5]).reshape(1, 2, 1, 1)
    aspp.fuse.bias.data[...] = 0.0
    out = aspp_forward(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), aspp).data
    # both branches see 3×3 sums 18, 21, 24, 27 under edge replication
    np.testing.assert_allclose(out, [[[27.0, 31.5], [36.0, 40.5]]], atol=1e-13)


def test_decoder_zero_weights_gives_half():
    rng = np.random.default_rng(15)
    dec = FPNDecoder(4, (8, 16, 32), rng)
    _zero(dec)
    out = decoder_forward(Tensor(rng.normal(size=(4, 2, 2))), (Tensor(rng.normal(size=(8, 16, 16))), Tensor(rng.normal(size=(16, 8, 8))), Tensor(rng.normal(size=(32, 4, 4)))), dec, (64, 64))
    assert out.shape == (1, 64, 64)
    assert np.all(out.data == 0.5)


def test_decoder_skip_count_mismatch():
    dec = FPNDecoder(4, (8, 16, 32), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        decoder_forward(Tensor(np.zeros((4, 2, 2))), (Tensor(np.zeros((8, 16, 16))),), dec, (64, 64))


@pytest.mark.parametrize("fuse_scale", [1, 2, 4])
def test_model_output_bounds(fuse_scale):
    cfg = ModelConfig(max_depth=80.0, fuse_scale=fuse_scale)
    m = DepthNet(cfg, seed=1)
    for scale in (0.0, 1.0, 100.0):
        out = m(Tensor(np.random.default_rng(3).normal(size=(3, 64, 64)) * scale)).data
        assert out.shape == (1, 64, 64)
        assert np.all(out > 0) and np.all(out < 80)


def test_model_saturated_head_stays_open_interval():
    m = DepthNet(ModelConfig(), seed=0)
    m.decoder.head.bias.data[...] = 1e4
    out = m(Tensor(np.zeros((3, 64, 64)))).data
    assert np.all(out < 10.0)
    m.decoder.head.bias.data[...] = -1e4
    assert np.all(m(Tensor(np.zeros((3, 64, 64)))).data > 0)


def test_doubling_max_depth_doubles_output():
    x = Tensor(np.random.default_rng(4).normal(size=(3, 64, 64)))
    a = DepthNet(ModelConfig(max_depth=5.0), seed=2)(x).data
    b = DepthNet(ModelConfig(max_depth=10.0), seed=2)(x).data
    np.testing.assert_array_equal(b, 2 * a)


def test_model_rejects_wrong_input_shape():
    with pytest.raises(ShapeError):
        DepthNet(ModelConfig())(Tensor(np.zeros((3, 32, 64))))


def test_channel_bookkeeping_state():
    cfg = ModelConfig()
    _, s = DepthNet(cfg).forward_with_state(Tensor(np.random.default_rng(0).normal(size=(3, 64, 64))))
    c_t = cfg.c_g + cfg.pem_co8 + cfg.pem_co16
    assert s.x_cat.shape == (c_t, 4) and s.x_xi.shape == (c_t, 4) and s.x_att.shape == (c_t, 4)
    assert s.x_r.shape == (c_t // 2, 4)
    assert s.x_k.shape == s.x_q.shape == s.x_v.shape == (c_t, 4)
    assert s.x_out.shape == (cfg.decoder_channels, 2, 2)


def test_ablations_run():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 64, 64)))
    for kw in ({"use_pem": False}, {"use_eam": False}, {"use_pem": False, "use_eam": False}):
        cfg = ModelConfig(**kw)
        out, s = DepthNet(cfg).forward_with_state(x)
        assert out.shape == (1, 64, 64)
        assert s.x_cat.shape[0] == cfg.c_t


def test_end_to_end_gradcheck_desk():
    cfg = load_config(preset="desk").model
    m = DepthNet(cfg, seed=3)
    rng = np.random.default_rng(0)
    image = Tensor(rng.normal(size=(3, 64, 64)))
    target = rng.uniform(1.0, 9.0, size=(1, 64, 64))
    params = dict(m.named_parameters())
    probe = [image] + [params[n] for n in ("encoder.stem.weight", "pem8.em.theta.weight", "pem16.reduce.weight", "eam.mlp_q.weight", "eam.em.mlp.weight", "aspp.fuse.weight", "decoder.head.weight")]

    def f(*_):
        return silog_loss(m(image), target)

    rep = grad_check(f, probe, max_coords=12, seed=1)
    assert rep.passed, rep.max_rel_err


def test_weights_roundtrip(tmp_path):
    m = DepthNet(ModelConfig(), seed=5)
    save_weights(tmp_path / "w.ecdw", m)
    m2 = DepthNet(ModelConfig(), seed=6)
    m2.load_state_dict(load_weights(tmp_path / "w.ecdw"))
    x = Tensor(np.random.default_rng(0).normal(size=(3, 64, 64)))
    np.testing.assert_array_equal(m(x).data, m2(x).data)


def test_weights_byte_layout():
    buf = encode_weights({"a.w": np.array([[1.0, 2.0, 3.0]])})
    expect = b"ECDW" + struct.pack("<I", 1) + struct.pack("<H", 3) + b"a.w" + struct.pack("<B", 2) + struct.pack("<II", 1, 3) + struct.pack("<3d", 1, 2, 3)
    assert buf == expect
    np.testing.assert_array_equal(decode_weights(buf)["a.w"], [[1.0, 2.0, 3.0]])


def test_weights_corruption_reports_offset():
    buf = encode_weights({"w": np.ones(2)})
    with pytest.raises(FormatError) as e:
        decode_weights(b"XXXX" + buf[4:])
    assert e.value.offset == 0
    with pytest.raises(FormatError):
        decode_weights(buf[:-3])
    with pytest.raises(FormatError):
        decode_weights(buf + b"\0")


def test_weights_mismatch_is_config_error():
    m = DepthNet(ModelConfig())
    with pytest.raises(ConfigError):
        m.load_state_dict(DepthNet(ModelConfig(decoder_channels=8)).state_dict())
