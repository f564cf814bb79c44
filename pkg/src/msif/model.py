"""The multi-stream network assembled from an :class:`ExperimentConfig`."""
import numpy as np

from msif import tensor as T
from msif.channels import ImageChannel, StgcnLayer, _uniform, stgcn_stack, tile_nodes
from msif.config import CHANNELS, ConfigError
from msif.fusion import FusionWeights, Mfc, Tpc, fuse, gaussian_head, tpc_forward
from msif.module import Module, param

FLOW_FEATURES = 50


class Msif(Module):
    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config.feature_dim
        kt = config.temporal_kernel

        def stack():
            return [StgcnLayer(2 if k == 0 else c, c, kt, rng) for k in range(config.stgcn_layers)]

        self.trajectory = stack()
        if "optical" in config.channels:
            self.flow_projection = param(_uniform(rng, (FLOW_FEATURES, 2), FLOW_FEATURES))
            self.optical = stack()
        if "image" in config.channels:
            self.image = ImageChannel(config.image_size, config.conv_channels, config.conv_strides,
                                      config.lstm_input, config.lstm_hidden, c, rng)
        n = len(config.channels)
        if config.fusion == "weighted_mean":
            self.fusion_weights = FusionWeights(n)
        elif config.fusion == "concat":
            self.mfc = Mfc(n * c, c, rng)
        self.tpc = Tpc(config.obs_len, config.pred_len, c, config.txpcnn_layers, config.tpc_fusion_depth,
                       config.output_dim, kt, rng)

    def __call__(self, batch):
        return self.forward(batch)

    def forward(self, batch):
        feats = channel_features(batch, self)
        fused = fuse([feats[k] for k in CHANNELS if k in feats], self.config.fusion,
                     getattr(self, "fusion_weights", None), getattr(self, "mfc", None))
        return gaussian_head(tpc_forward(fused, self.tpc))


def channel_features(batch, model):
    """Per-channel (T, N, 2) blocks for the channels enabled in the model config."""
    channels = model.config.channels
    if not channels:
        raise ConfigError("no channels enabled")
    gain = model.config.input_gain
    out = {"trajectory": stgcn_stack(T.Tensor(batch.traj_attrs * gain), batch.adj_norm, model.trajectory)}
    if "optical" in channels:
        attrs = T.matmul(T.Tensor(batch.flow_pooled * gain), model.flow_projection)
        out["optical"] = stgcn_stack(attrs, batch.adj_norm, model.optical)
    if "image" in channels:
        if batch.images is None:
            raise ConfigError("image channel enabled but the batch carries no frames")
        out["image"] = tile_nodes(model.image.frame_features(batch.images), batch.image_index)
    return out
