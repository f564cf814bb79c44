"""Multi-stream fusion, the time-extrapolating prediction CNN and the Gaussian head."""
from dataclasses import dataclass

import numpy as np

from msif import tensor as T
from msif.channels import _uniform, temporal_conv
from msif.module import Module, param
from msif.tensor import ShapeError

# keeps |rho| strictly below one even where tanh saturates in float64
RHO_SCALE = 1.0 - 1e-6


class MissingMfcError(ValueError):
    pass


class Mfc(Module):
    """1x1 convolution over the concatenated channel axis (e.g. 6 -> 2)."""

    def __init__(self, c_in, c_out=2, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.weight = param(_uniform(rng, (c_in, c_out), c_in))
        self.bias = param(np.zeros(c_out))

    def __call__(self, x):
        return T.matmul(x, self.weight) + self.bias


class FusionWeights(Module):
    """Softmax-normalised, hence non-negative and summing to one, channel weights."""

    def __init__(self, n):
        self.logits = param(np.zeros(n))

    def weights(self):
        return T.softmax(self.logits)


def fuse(features, method, weights=None, mfc=None):
    features = [T.as_tensor(f) for f in features]
    if not features:
        raise ValueError("fusion needs at least one feature block")
    shape = features[0].shape
    for f in features[1:]:
        if f.shape != shape:
            raise ShapeError(f"cannot fuse feature blocks of shapes {shape} and {f.shape}")
    if method == "mean":
        out = features[0]
        for f in features[1:]:
            out = out + f
        return out * (1.0 / len(features))
    if method == "weighted_mean":
        w = weights.weights() if isinstance(weights, FusionWeights) else T.as_tensor(
            np.full(len(features), 1.0 / len(features)) if weights is None else weights)
        if w.shape != (len(features),):
            raise ShapeError(f"{len(features)} feature blocks but weights of shape {w.shape}")
        out = None
        for k, f in enumerate(features):
            term = f * T.getitem(w, k)
            out = term if out is None else out + term
        return out
    if method == "concat":
        if mfc is None:
            raise MissingMfcError("concatenation fusion needs an MFC to restore the channel width")
        return mfc(T.concat(features, axis=-1))
    raise ValueError(f"unknown fusion method {method!r}")


class Tpc(Module):
    """Time map 8 -> 12, residual temporal convolutions, then a 2 -> 5 channel head."""

    def __init__(self, obs_len=8, pred_len=12, channels=2, n_layers=5, head_depth=2,
                 out_dim=5, kt=3, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.obs_len, self.pred_len = obs_len, pred_len
        self.time_weight = param(_uniform(rng, (pred_len, obs_len), obs_len))
        self.time_bias = param(np.zeros((pred_len, 1, 1)))
        self.res_kernels, self.res_bias = [], []
        for _ in range(n_layers - 1):
            self.res_kernels.append(param(_uniform(rng, (kt, channels, channels), kt * channels) * 0.5))
            self.res_bias.append(param(np.zeros(channels)))
        self.head_w, self.head_b = [], []
        for _ in range(head_depth - 1):
            self.head_w.append(param(_uniform(rng, (channels, channels), channels)))
            self.head_b.append(param(np.zeros(channels)))
        self.out_w = param(_uniform(rng, (channels, out_dim), channels))
        self.out_b = param(np.zeros(out_dim))


def tpc_forward(fused, tpc):
    fused = T.as_tensor(fused)
    if fused.ndim != 3 or fused.shape[0] != tpc.obs_len:
        raise ShapeError(f"prediction CNN needs {tpc.obs_len} observed steps, got shape {fused.shape}")
    _, n, c = fused.shape
    x = T.reshape(T.matmul(tpc.time_weight, T.reshape(fused, (tpc.obs_len, n * c))), (tpc.pred_len, n, c))
    # tanh rather than a kinked activation keeps the loss smooth in every TPC weight
    x = T.tanh(x + tpc.time_bias)
    for k, b in zip(tpc.res_kernels, tpc.res_bias):
        x = x + T.tanh(temporal_conv(x, k, b))
    for w, b in zip(tpc.head_w, tpc.head_b):
        x = T.tanh(T.matmul(x, w) + b)
    return T.matmul(x, tpc.out_w) + tpc.out_b


@dataclass
class GaussianTrajectoryField:
    """Per node-step bivariate normal: mu (T, N, 2), sigma (T, N, 2), rho (T, N)."""

    mu: T.Tensor
    sigma: T.Tensor
    rho: T.Tensor

    @property
    def shape(self):
        return self.mu.shape

    def numpy(self):
        return self.mu.data, self.sigma.data, self.rho.data

    def covariance(self):
        _, s, r = self.numpy()
        sxy = r * s[..., 0] * s[..., 1]
        return np.stack([np.stack([s[..., 0] ** 2, sxy], -1), np.stack([sxy, s[..., 1] ** 2], -1)], -2)


def gaussian_head(raw):
    raw = T.as_tensor(raw)
    if raw.shape[-1] != 5:
        raise ShapeError(f"Gaussian head needs 5 output channels, got {raw.shape}")
    mu = T.getitem(raw, (Ellipsis, slice(0, 2)))
    sigma = T.exp(T.getitem(raw, (Ellipsis, slice(2, 4))))
    rho = T.tanh(T.getitem(raw, (Ellipsis, 4))) * RHO_SCALE
    return GaussianTrajectoryField(mu, sigma, rho)
