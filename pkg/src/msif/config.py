"""Experiment configuration and the flat ``key = value`` config file format.

Defaults reproduce the published training table (learning rate 1e-6, Adam,
batch 1024, 250 epochs, 8 observed / 12 predicted steps, one ST-GCN layer,
five TXPCNN layers, 5 output parameters, x0.1 decay every 50 epochs).
"""
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

CHANNELS = ("trajectory", "optical", "image")
FUSION_METHODS = ("mean", "weighted_mean", "concat")
PRESETS = {
    "msif1": ("trajectory", "optical"),
    "msif2": ("trajectory", "image"),
    "msif3": ("trajectory", "optical", "image"),
}
_PINNED = {"obs_len": 8, "pred_len": 12, "output_dim": 5}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    learning_rate: float = 1.0e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1024
    epochs: int = 250
    obs_len: int = 8
    pred_len: int = 12
    stgcn_layers: int = 1
    txpcnn_layers: int = 5
    output_dim: int = 5
    lr_decay_every: int = 50
    lr_decay_factor: float = 0.1
    channels: tuple = CHANNELS
    fusion: str = "concat"
    tpc_fusion_depth: int = 2
    seed: int = 0
    # architecture details not fixed by the published table
    feature_dim: int = 2
    input_gain: float = 100.0     # node attributes are scaled by this before the graph layers
    temporal_kernel: int = 3
    image_size: tuple = (32, 60)
    conv_channels: tuple = (8, 16, 1)
    conv_strides: tuple = (2, 2, 1)
    lstm_input: int = 5
    lstm_hidden: int = 8
    # optical flow
    flow_window: int = 15
    flow_levels: int = 3
    flow_iters: int = 3
    eval_k: int = 20

    def __post_init__(self):
        chans = tuple(self.channels)
        object.__setattr__(self, "channels", tuple(c for c in CHANNELS if c in chans))
        object.__setattr__(self, "image_size", tuple(int(x) for x in self.image_size))
        object.__setattr__(self, "conv_channels", tuple(int(x) for x in self.conv_channels))
        object.__setattr__(self, "conv_strides", tuple(int(x) for x in self.conv_strides))
        unknown = set(chans) - set(CHANNELS)
        if unknown:
            raise ConfigError(f"unknown channels {sorted(unknown)}; choose from {CHANNELS}")
        if "trajectory" not in self.channels:
            raise ConfigError("the trajectory channel is always required")
        if self.fusion not in FUSION_METHODS:
            raise ConfigError(f"fusion must be one of {FUSION_METHODS}, got {self.fusion!r}")
        if not 1 <= self.tpc_fusion_depth <= 3:
            raise ConfigError("tpc_fusion_depth must be 1, 2 or 3")
        if len(self.conv_channels) != len(self.conv_strides) or self.conv_channels[-1] != 1:
            raise ConfigError("conv_channels/conv_strides must align and end in a single channel")
        if self.batch_size < 1 or self.epochs < 0 or self.txpcnn_layers < 1 or self.stgcn_layers < 1:
            raise ConfigError("batch_size, txpcnn_layers and stgcn_layers must be >= 1, epochs >= 0")
        for k, v in _PINNED.items():
            if getattr(self, k) != v:
                log.warning("override: %s = %s (default %s)", k, getattr(self, k), v)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "preset" in d:
            d.setdefault("channels", PRESETS[d.pop("preset")])
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for k in ("channels", "image_size", "conv_channels", "conv_strides"):
            if k in d and isinstance(d[k], str):
                d[k] = tuple(s.strip() for s in d[k].split(",") if s.strip())
        return cls(**d)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def architecture(self):
        """Fields that determine the parameter set of a model."""
        keys = ("channels", "fusion", "tpc_fusion_depth", "stgcn_layers", "txpcnn_layers", "feature_dim",
                "temporal_kernel", "image_size", "conv_channels", "conv_strides", "lstm_input",
                "lstm_hidden", "obs_len", "pred_len", "output_dim")
        d = self.to_dict()
        return {k: d[k] for k in keys}


def read_flat_config(path):
    """Parse a flat ``key = value`` document (TOML syntax, no tables)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: config must be flat, found tables {nested}")
    return data


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return repr(v)


def write_flat_config(path, mapping):
    lines = [f"{k} = {_fmt(v)}" for k, v in mapping.items() if v is not None]
    Path(path).write_text("\n".join(lines) + "\n")


def load_experiment_config(path=None, **overrides):
    d = read_flat_config(path) if path else {}
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(d)


def desk_config(**overrides):
    """The bundled seconds-scale configuration (batch 64, 80 epochs)."""
    base = dict(batch_size=64, epochs=80, learning_rate=0.03)
    base.update(overrides)
    return ExperimentConfig.from_dict(base)
