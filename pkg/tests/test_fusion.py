import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msif import tensor as T
from msif.fusion import FusionWeights, Mfc, MissingMfcError, Tpc, fuse, gaussian_head, tpc_forward
from msif.gradcheck import check_gradients
from msif.tensor import ShapeError, Tensor


def test_mean_examples(rng):
    f = Tensor(rng.standard_normal((8, 3, 2)))
    np.testing.assert_allclose(fuse([f, f, f], "mean").data, f.data, rtol=1e-15, atol=1e-15)
    assert not fuse([f, -f], "mean").data.any()


def test_weighted_mean_with_equal_weights_equals_mean(rng):
    fs = [Tensor(rng.standard_normal((8, 3, 2))) for _ in range(3)]
    a = fuse(fs, "mean").data
    b = fuse(fs, "weighted_mean", FusionWeights(3)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_weighted_mean_weights_are_a_distribution(rng):
    w = FusionWeights(3)
    w.logits.data[:] = rng.standard_normal(3) * 3
    v = w.weights().data
    assert (v >= 0).all() and v.sum() == pytest.approx(1.0)


def test_concat_widths(rng):
    fs = [Tensor(rng.standard_normal((8, 3, 2))) for _ in range(3)]
    mfc = Mfc(6, 2, rng)
    assert T.concat(fs, axis=-1).shape == (8, 3, 6)
    assert fuse(fs, "concat", mfc=mfc).shape == (8, 3, 2)
    with pytest.raises(MissingMfcError):
        fuse(fs, "concat")


def test_fuse_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        fuse([Tensor(np.zeros((8, 3, 2))), Tensor(np.zeros((8, 2, 2)))], "mean")


@pytest.mark.parametrize("method", ["mean", "weighted_mean", "concat"])
def test_fusion_node_equivariance(rng, method):
    fs = [rng.standard_normal((8, 4, 2)) for _ in range(3)]
    perm = rng.permutation(4)
    mfc, w = Mfc(6, 2, rng), FusionWeights(3)
    a = fuse([Tensor(f) for f in fs], method, w, mfc).data
    b = fuse([Tensor(f[:, perm]) for f in fs], method, w, mfc).data
    np.testing.assert_allclose(b, a[:, perm], atol=1e-15)


def test_tpc_zero_weights_give_zero(rng):
    tpc = Tpc(rng=rng)
    for p in tpc.parameters():
        p.data[...] = 0
    assert not tpc_forward(rng.standard_normal((8, 3, 2)), tpc).data.any()


@pytest.mark.parametrize("n", [1, 2, 7])
@pytest.mark.parametrize("depth", [1, 2, 3])
def test_tpc_output_shape(rng, n, depth):
    assert tpc_forward(rng.standard_normal((8, n, 2)), Tpc(head_depth=depth, rng=rng)).shape == (12, n, 5)


def test_tpc_layer_count(rng):
    tpc = Tpc(n_layers=5, rng=rng)
    assert len(tpc.res_kernels) == 4


def test_tpc_wrong_time_extent(rng):
    with pytest.raises(ShapeError):
        tpc_forward(rng.standard_normal((7, 2, 2)), Tpc())


def test_tpc_first_layer_gradient(rng):
    tpc = Tpc(rng=rng)
    x = rng.standard_normal((8, 2, 2))
    w = rng.standard_normal((12, 2, 5))
    errs = check_gradients(lambda: T.tsum(tpc_forward(x, tpc) * w),
                           [("time_weight", tpc.time_weight), ("time_bias", tpc.time_bias)])
    assert max(errs.values()) < 1e-4


def test_gaussian_head_examples():
    g = gaussian_head(np.zeros((12, 2, 5)))
    assert not g.mu.data.any() and (g.sigma.data == 1).all() and not g.rho.data.any()
    raw = np.zeros((1, 1, 5))
    raw[..., 2] = np.log(2.0)
    assert gaussian_head(raw).sigma.data[0, 0, 0] == pytest.approx(2.0)
    raw[..., 4] = 1e3
    assert 0.999 < gaussian_head(raw).rho.data[0, 0] < 1.0
    raw[..., 4] = -1e3
    assert -1.0 < gaussian_head(raw).rho.data[0, 0] < -0.999


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 2, 5), elements=st.floats(-40, 40)))
def test_head_covariance_positive_definite(raw):
    g = gaussian_head(raw)
    s, r = g.sigma.data, g.rho.data
    assert (s > 0).all() and (np.abs(r) < 1).all()
    assert (s[..., 0] ** 2 * s[..., 1] ** 2 * (1 - r * r) > 0).all()
