"""Feature extractors: ST-GCN graph channels and the CNN + LSTM image channel.

Every channel emits a time-major ``(T, N, 2)`` block so that the fusion stage
can combine them elementwise.
"""
import numpy as np

from msif import tensor as T
from msif.module import Module, param
from msif.tensor import ShapeError


def _uniform(rng, shape, fan_in):
    """Uniform init with variance 1 / fan_in."""
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def temporal_conv(x, kernel, bias=None):
    """Zero-padded convolution along the leading (time) axis.

    ``x`` is (T, N, C_in), ``kernel`` is (kt, C_in, C_out) with odd ``kt``;
    output keeps extent T.
    """
    kt = kernel.shape[0]
    if kt % 2 == 0:
        raise ValueError("temporal kernel size must be odd")
    if x.shape[-1] != kernel.shape[1]:
        raise ShapeError(f"temporal conv channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    n_t = x.shape[0]
    pad = kt // 2
    if pad:
        z = T.Tensor(np.zeros((pad,) + x.shape[1:]))
        xp = T.concat([z, x, z], axis=0)
    else:
        xp = x
    out = None
    for k in range(kt):
        term = T.matmul(T.getitem(xp, slice(k, k + n_t)), T.getitem(kernel, k))
        out = term if out is None else out + term
    if bias is not None:
        out = out + bias
    return out


class StgcnLayer(Module):
    """Graph convolution ``adj_norm @ V @ W`` then PReLU then a temporal conv."""

    def __init__(self, c_in, c_out, kt=3, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.weight = param(_uniform(rng, (c_in, c_out), c_in))
        tk = _uniform(rng, (kt, c_out, c_out), kt * c_out) * 0.5
        tk[kt // 2] += np.eye(c_out)
        self.temporal_kernel = param(tk)
        self.temporal_bias = param(np.zeros(c_out))
        self.prelu_alpha = param(0.25)

    @property
    def c_in(self):
        return self.weight.shape[0]


def stgcn_forward(attrs, adj_norm, layer):
    attrs = T.as_tensor(attrs)
    if attrs.shape[-1] != layer.c_in:
        raise ShapeError(f"node attributes have {attrs.shape[-1]} channels, layer expects {layer.c_in}")
    adj = T.as_tensor(adj_norm)
    if adj.shape[:2] != attrs.shape[:2] or adj.shape[1] != adj.shape[2]:
        raise ShapeError(f"adjacency {adj.shape} does not fit attributes {attrs.shape}")
    h = T.matmul(T.matmul(adj, attrs), layer.weight)
    h = T.prelu(h, layer.prelu_alpha)
    return temporal_conv(h, layer.temporal_kernel, layer.temporal_bias)


def stgcn_stack(attrs, adj_norm, layers):
    h = attrs
    for layer in layers:
        h = stgcn_forward(h, adj_norm, layer)
    return h


class LstmCell(Module):
    """Standard LSTM cell, row-vector convention (``x @ W``)."""

    def __init__(self, n_in, n_hidden, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_in, self.n_hidden = n_in, n_hidden
        for gate in "fioc":
            setattr(self, f"W_x{gate}", param(_uniform(rng, (n_in, n_hidden), n_in)))
            setattr(self, f"W_h{gate}", param(_uniform(rng, (n_hidden, n_hidden), n_hidden)))
            setattr(self, f"b_{gate}", param(np.zeros(n_hidden)))

    def initial_state(self, batch_shape=()):
        z = np.zeros(tuple(batch_shape) + (self.n_hidden,))
        return T.Tensor(z), T.Tensor(z)


def _rowmul(x, w):
    if x.ndim == 1:
        return T.reshape(T.matmul(T.reshape(x, (1, -1)), w), (-1,))
    return T.matmul(x, w)


def lstm_step(cell, x, h_prev, c_prev):
    x, h_prev, c_prev = T.as_tensor(x), T.as_tensor(h_prev), T.as_tensor(c_prev)
    if x.shape[-1] != cell.n_in or h_prev.shape[-1] != cell.n_hidden or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_step: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} "
                         f"do not fit a {cell.n_in}->{cell.n_hidden} cell")

    def gate(g):
        return _rowmul(x, getattr(cell, f"W_x{g}")) + _rowmul(h_prev, getattr(cell, f"W_h{g}")) \
            + getattr(cell, f"b_{g}")

    f = T.sigmoid(gate("f"))
    i = T.sigmoid(gate("i"))
    o = T.sigmoid(gate("o"))
    c = f * c_prev + i * T.tanh(gate("c"))
    h = o * T.tanh(c)
    return h, c


def area_resize_matrix(n_in, n_out):
    """(n_out, n_in) matrix averaging input pixels by overlap with each output cell."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for k in range(n_out):
        lo, hi = k * scale, (k + 1) * scale
        for j in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            m[k, j] = min(hi, j + 1) - max(lo, j)
        m[k] /= m[k].sum()
    return m


def resize_frames(frames, size):
    frames = np.asarray(frames, dtype=np.float64)
    h, w = size
    if frames.shape[-2:] == (h, w):
        return frames
    ry = area_resize_matrix(frames.shape[-2], h)
    rx = area_resize_matrix(frames.shape[-1], w)
    return ry @ frames @ rx.T


class ImageChannel(Module):
    """Conv stack to an 8 x 15 map, rows pooled to width 5, LSTM over the rows."""

    def __init__(self, image_size=(32, 60), conv_channels=(8, 16, 1), conv_strides=(2, 2, 1),
                 lstm_input=5, lstm_hidden=8, feature_dim=2, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.image_size = tuple(image_size)
        self.strides = tuple(conv_strides)
        self.conv_w, self.conv_b = [], []
        c_in = 1
        for c_out in conv_channels:
            self.conv_w.append(param(_uniform(rng, (c_out, c_in, 3, 3), 9 * c_in)))
            self.conv_b.append(param(np.zeros(c_out)))
            c_in = c_out
        h, w = self.image_size
        for s in self.strides:
            h, w = (h - 1) // s + 1, (w - 1) // s + 1
        self.map_size = (h, w)
        if w % lstm_input:
            raise ShapeError(f"feature-map width {w} is not a multiple of the LSTM input width {lstm_input}")
        self.pool = w // lstm_input
        self.lstm = LstmCell(lstm_input, lstm_hidden, rng)
        self.proj = param(_uniform(rng, (lstm_hidden, feature_dim), lstm_hidden))
        self.proj_bias = param(np.zeros(feature_dim))

    def feature_map(self, images):
        """(B, H, W) frames -> (B, 8, 15) maps."""
        x = T.reshape(T.as_tensor(resize_frames(images, self.image_size)), (-1, 1) + self.image_size)
        last = len(self.conv_w) - 1
        for k, (w, b, s) in enumerate(zip(self.conv_w, self.conv_b, self.strides)):
            x = T.conv2d(x, w, stride=s, padding=1, bias=b)
            if k < last:
                x = T.tanh(x)
        return T.reshape(x, (-1,) + self.map_size)

    def frame_features(self, images):
        """Per-frame feature vectors (B, feature_dim) for a stack of frames."""
        fmap = self.feature_map(images)
        b, rows, width = fmap.shape
        seq = T.mean(T.reshape(fmap, (b, rows, width // self.pool, self.pool)), axis=-1)
        h, c = self.lstm.initial_state((b,))
        for r in range(rows):
            h, c = lstm_step(self.lstm, T.getitem(seq, (slice(None), r)), h, c)
        return T.matmul(h, self.proj) + self.proj_bias


def image_channel_forward(images, channel, obs_len=8):
    """Observed frames (obs_len, H, W) -> (obs_len, feature_dim)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[0] != obs_len:
        raise ShapeError(f"image channel needs {obs_len} grayscale frames, got shape {images.shape}")
    return channel.frame_features(images)


def tile_nodes(frame_feats, index):
    """Gather per-frame features (U, C) into (T, N, C) using an integer (T, N) index."""
    index = np.asarray(index)
    out = T.take(frame_feats, index.ravel(), axis=0)
    return T.reshape(out, index.shape + (frame_feats.shape[-1],))
