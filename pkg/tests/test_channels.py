import numpy as np
import pytest
from scipy.special import expit

from msif import tensor as T
from msif.channels import (ImageChannel, LstmCell, StgcnLayer, area_resize_matrix, image_channel_forward,
                           lstm_step, resize_frames, stgcn_forward, temporal_conv)
from msif.config import ConfigError, ExperimentConfig, PRESETS
from msif.gradcheck import check_gradients
from msif.model import Msif, channel_features
from msif.samples import make_batch, prepare
from msif.tensor import ShapeError, Tensor


def identity_layer(c=2):
    layer = StgcnLayer(c, c)
    layer.weight.data[:] = np.eye(c)
    layer.temporal_kernel.data[:] = 0
    layer.temporal_kernel.data[1] = np.eye(c)
    layer.temporal_bias.data[:] = 0
    return layer


# -- ST-GCN -----------------------------------------------------------

def test_stgcn_identity_single_node_is_prelu(rng):
    attrs = rng.standard_normal((8, 1, 2))
    out = stgcn_forward(attrs, np.ones((8, 1, 1)), identity_layer())
    np.testing.assert_array_equal(out.data, np.where(attrs > 0, attrs, 0.25 * attrs))


def test_stgcn_zero_attrs_give_zero(rng):
    layer = StgcnLayer(2, 2, rng=rng)
    assert not stgcn_forward(np.zeros((8, 3, 2)), np.broadcast_to(np.eye(3), (8, 3, 3)), layer).data.any()


def test_stgcn_matches_dense_oracle(rng):
    layer = StgcnLayer(2, 2, rng=rng)
    layer.temporal_bias.data[:] = rng.standard_normal(2)
    attrs = rng.standard_normal((5, 2, 2))
    adj = rng.random((5, 2, 2))
    w, k, b = layer.weight.data, layer.temporal_kernel.data, layer.temporal_bias.data
    h = np.einsum("tij,tjc,cd->tid", adj, attrs, w)
    h = np.where(h > 0, h, 0.25 * h)
    hp = np.concatenate([np.zeros((1, 2, 2)), h, np.zeros((1, 2, 2))])
    ref = sum(hp[s:s + 5] @ k[s] for s in range(3)) + b
    np.testing.assert_allclose(stgcn_forward(attrs, adj, layer).data, ref, atol=1e-14)


def test_stgcn_channel_mismatch():
    with pytest.raises(ShapeError):
        stgcn_forward(np.zeros((8, 2, 3)), np.zeros((8, 2, 2)), StgcnLayer(2, 2))


def test_temporal_conv_preserves_extent(rng):
    out = temporal_conv(Tensor(rng.standard_normal((12, 4, 2))), Tensor(rng.standard_normal((3, 2, 5))))
    assert out.shape == (12, 4, 5)


# -- LSTM -------------------------------------------------------------

def zero_cell(n_in=3, n_h=4):
    cell = LstmCell(n_in, n_h)
    for p in cell.parameters():
        p.data[...] = 0
    return cell


def test_lstm_zero_cell():
    cell = zero_cell()
    h, c = lstm_step(cell, np.ones(3), np.zeros(4), np.zeros(4))
    assert not h.data.any() and not c.data.any()


def test_lstm_forget_gate_saturated_open():
    cell = zero_cell()
    cell.b_f.data[:] = 10.0
    k = np.array([0.5, -2.0, 3.0, 1.0])
    _, c = lstm_step(cell, np.ones(3), np.zeros(4), k)
    np.testing.assert_allclose(c.data, k, atol=1e-4 * np.abs(k).max())


def test_lstm_matches_scalar_oracle(rng):
    cell = LstmCell(3, 2, rng)
    for p in cell.parameters():
        p.data[...] = rng.standard_normal(p.shape) * 0.5
    x, h0, c0 = rng.standard_normal(3), rng.standard_normal(2), rng.standard_normal(2)
    W = {n: p.data for n, p in cell.named_parameters()}
    ref_h, ref_c = [], []
    for j in range(2):
        pre = {g: sum(x[i] * W[f"W_x{g}"][i, j] for i in range(3)) + sum(h0[i] * W[f"W_h{g}"][i, j] for i in range(2))
               + W[f"b_{g}"][j] for g in "fioc"}
        c = expit(pre["f"]) * c0[j] + expit(pre["i"]) * np.tanh(pre["c"])
        ref_c.append(c)
        ref_h.append(expit(pre["o"]) * np.tanh(c))
    h, c = lstm_step(cell, x, h0, c0)
    np.testing.assert_allclose(h.data, ref_h, atol=1e-12)
    np.testing.assert_allclose(c.data, ref_c, atol=1e-12)


def test_lstm_state_stays_bounded(rng):
    cell = LstmCell(3, 5, rng)
    h, c = cell.initial_state()
    for _ in range(200):
        h, c = lstm_step(cell, rng.standard_normal(3) * 10, h, c)
        assert np.abs(h.data).max() < 1


def test_lstm_dimension_error():
    with pytest.raises(ShapeError):
        lstm_step(LstmCell(3, 4), np.zeros(2), np.zeros(4), np.zeros(4))


# -- image channel ----------------------------------------------------

def test_area_resize_preserves_mean(rng):
    m = area_resize_matrix(120, 32)
    np.testing.assert_allclose(m.sum(1), 1.0)
    img = rng.random((120, 160))
    small = resize_frames(img, (32, 60))
    assert small.shape == (32, 60)
    assert small.mean() == pytest.approx(img.mean(), rel=1e-12)


def test_feature_map_is_8_by_15():
    ch = ImageChannel()
    assert ch.map_size == (8, 15)
    assert ch.feature_map(np.zeros((2, 120, 160))).shape == (2, 8, 15)


def test_identical_frames_identical_features(rng):
    frame = rng.random((120, 160))
    out = image_channel_forward(np.stack([frame] * 8), ImageChannel(rng=rng)).data
    assert out.shape == (8, 2)
    np.testing.assert_array_equal(out, np.broadcast_to(out[0], out.shape))


def test_black_frames_give_zero_map(rng):
    ch = ImageChannel(rng=rng)
    assert not ch.feature_map(np.zeros((8, 120, 160))).data.any()
    cell = ch.lstm
    h, c = cell.initial_state()
    for _ in range(8):
        h, c = lstm_step(cell, np.zeros(5), h, c)
    expected = h.data @ ch.proj.data + ch.proj_bias.data
    np.testing.assert_allclose(image_channel_forward(np.zeros((8, 120, 160)), ch).data[0], expected, atol=1e-15)


def test_wrong_frame_count():
    with pytest.raises(ShapeError):
        image_channel_forward(np.zeros((7, 32, 60)), ImageChannel())


def test_image_channel_gradients_two_frames(rng):
    ch = ImageChannel(rng=rng)
    frames = rng.random((2, 32, 60))
    w = rng.standard_normal((2, 2))

    def loss():
        return T.tsum(ch.frame_features(frames) * w)
    errs = check_gradients(loss, [(n, p) for n, p in ch.named_parameters() if n.startswith("conv_w")])
    assert max(errs.values()) < 1e-4, errs


# -- channel assembly -------------------------------------------------

@pytest.fixture(scope="module")
def batch(two_agent_scene):
    cfg = ExperimentConfig()
    prep = prepare([two_agent_scene], cfg)
    return make_batch(prep.samples[:1], prep.images), prep


@pytest.mark.parametrize("preset,expected", [("msif1", {"trajectory", "optical"}),
                                             ("msif2", {"trajectory", "image"}),
                                             ("msif3", {"trajectory", "optical", "image"})])
def test_presets_select_channels(batch, preset, expected):
    cfg = ExperimentConfig.from_dict({"preset": preset})
    feats = channel_features(batch[0], Msif(cfg))
    assert set(feats) == expected
    assert {f.shape for f in feats.values()} == {(8, 2, 2)}
    assert set(PRESETS[preset]) == expected


def test_image_feature_tiled_across_nodes(batch):
    feats = channel_features(batch[0], Msif(ExperimentConfig()))
    fi = feats["image"].data
    np.testing.assert_array_equal(fi[:, 0], fi[:, 1])


def test_trajectory_channel_required():
    with pytest.raises(ConfigError):
        ExperimentConfig(channels=("optical", "image"))
    with pytest.raises(ConfigError):
        ExperimentConfig(channels=())


def test_channel_permutation_equivariance(batch):
    b, prep = batch
    s = prep.samples[0]
    model = Msif(ExperimentConfig())
    f = channel_features(b, model)
    fp = channel_features(make_batch([s.permuted([1, 0])], prep.images), model)
    for k in ("trajectory", "optical"):
        np.testing.assert_allclose(fp[k].data, f[k].data[:, ::-1], atol=1e-12)
    np.testing.assert_array_equal(fp["image"].data, f["image"].data)
