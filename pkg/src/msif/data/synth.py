"""Synthetic intersection scenes with ground-truth tracks.

Frames are grayscale in [0, 1] and quantized to 16-bit levels so that the PGM
files written by :mod:`msif.data.io` reproduce them bit-exactly. Pixel ``j``
covers the continuous interval ``[j, j + 1)``; rectangles are rendered with
exact area coverage, so a rectangle's painted mass equals its area and its
intensity centroid sits at the box center up to edge-pixel discretisation.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

QUANT = 65535
OBS_LEN = 8
PRED_LEN = 12


class GenerationError(ValueError):
    pass


class DegenerateBoxError(ValueError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    """Explicit agent: center (x, y) at frame 0, velocity in px/frame."""

    x: float
    y: float
    vx: float
    vy: float
    yaw_rate: float = 0.0
    width: float = 10.0
    height: float = 10.0
    intensity: float = 0.7


@dataclass(frozen=True)
class GeneratorConfig:
    height: int = 120
    width: int = 160
    n_frames: int = 32
    n_objects: int = 4
    n_scenes: int = 40
    background: float = 0.25
    texture_amplitude: float = 0.05
    texture_scale: float = 1.5
    speed_min: float = 0.6
    speed_max: float = 2.0
    turning_fraction: float = 0.5
    yaw_rate_min: float = 0.02
    yaw_rate_max: float = 0.06
    size_min: float = 8.0
    size_max: float = 16.0
    intensity_min: float = 0.4
    intensity_max: float = 0.9
    margin: float = 2.0
    frame_rate_hz: float = 10.0
    agents: tuple = ()

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        d = dict(d)
        if "agents" in d:
            d["agents"] = tuple(a if isinstance(a, AgentSpec) else AgentSpec(**a) for a in d["agents"])
        return cls(**d)


@dataclass
class ObjectTrack:
    """Per-frame boxes ``frame -> (x_tl, y_tl, x_br, y_br)`` in pixels."""

    object_id: int
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        for f, box in self.states.items():
            x_tl, y_tl, x_br, y_br = box
            if not (x_tl < x_br and y_tl < y_br):
                raise DegenerateBoxError(f"object {self.object_id} frame {f}: box {box}")

    @property
    def frames(self):
        return sorted(self.states)

    def box(self, frame):
        return self.states[frame]

    def center(self, frame):
        x_tl, y_tl, x_br, y_br = self.states[frame]
        return bbox_center((x_tl, y_tl), (x_br, y_br))


@dataclass(frozen=True)
class SceneSequence:
    frames: np.ndarray          # (F, H, W) float64 in [0, 1]
    tracks: tuple               # ObjectTrack, sorted by object_id
    frame_rate_hz: float = 10.0
    gamma_applied: float = 1.0
    seed: Optional[int] = None
    flows: Optional[tuple] = None   # FlowField per frame; index t is flow t-1 -> t

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise ValueError(f"frames must be (F, H, W), got {frames.shape}")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
            raise ValueError("pixel intensities must lie in [0, 1]")
        n = frames.shape[0]
        for tr in self.tracks:
            bad = [f for f in tr.states if not 0 <= f < n]
            if bad:
                raise ValueError(f"track {tr.object_id} references missing frames {bad[:3]}")
        if self.flows is not None and len(self.flows) != n:
            raise ValueError(f"expected {n} flow fields, got {len(self.flows)}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "tracks", tuple(sorted(self.tracks, key=lambda t: t.object_id)))

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]

    def track(self, object_id):
        for tr in self.tracks:
            if tr.object_id == object_id:
                return tr
        raise KeyError(object_id)

    def with_flows(self, flows):
        return SceneSequence(self.frames, self.tracks, self.frame_rate_hz,
                             self.gamma_applied, self.seed, tuple(flows))


@dataclass(frozen=True)
class SampleWindow:
    start: int
    observed: tuple
    future: tuple
    node_ids: tuple


def bbox_center(tl, br):
    """Midpoint of a box given its top-left and bottom-right vertices."""
    (x_tl, y_tl), (x_br, y_br) = tl, br
    if not (x_tl < x_br and y_tl < y_br):
        raise DegenerateBoxError(f"top-left {tuple(tl)} is not strictly above-left of {tuple(br)}")
    return ((x_tl + x_br) / 2.0, (y_tl + y_br) / 2.0)


def apply_gamma(image, g):
    """Pixelwise power law ``image ** g``; g > 1 darkens, g < 1 brightens."""
    if not g > 0:
        raise ValueError(f"gamma must be positive, got {g}")
    img = np.asarray(image, dtype=np.float64)
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("gamma correction expects intensities in [0, 1]")
    if g == 1.0:
        return img.copy()
    return np.power(img, g)


def quantize(img):
    return np.round(np.clip(img, 0.0, 1.0) * QUANT) / QUANT


def _coverage(lo, hi, n):
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(edges + 1.0, hi) - np.maximum(edges, lo), 0.0, 1.0)


def render_frame(background, boxes):
    """Paint ``(box, intensity)`` rectangles over ``background`` in order."""
    img = background.copy()
    H, W = img.shape
    for (x_tl, y_tl, x_br, y_br), level in boxes:
        cov = np.outer(_coverage(y_tl, y_br, H), _coverage(x_tl, x_br, W))
        img = img * (1.0 - cov) + level * cov
    return img


def _centers(agent, n_frames):
    k = np.arange(n_frames, dtype=np.float64)
    if agent.yaw_rate == 0.0:
        return np.stack([agent.x + agent.vx * k, agent.y + agent.vy * k], axis=1)
    speed = np.hypot(agent.vx, agent.vy)
    heading = np.arctan2(agent.vy, agent.vx) + agent.yaw_rate * k[:-1]
    steps = np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=1)
    pos = np.zeros((n_frames, 2))
    pos[0] = agent.x, agent.y
    pos[1:] = pos[0] + np.cumsum(steps, axis=0)
    return pos


def _in_bounds(centers, agent, cfg):
    hw, hh = agent.width / 2.0, agent.height / 2.0
    return (centers[:, 0].min() - hw >= cfg.margin and centers[:, 0].max() + hw <= cfg.width - cfg.margin
            and centers[:, 1].min() - hh >= cfg.margin and centers[:, 1].max() + hh <= cfg.height - cfg.margin)


def _random_agent(rng, cfg):
    for _ in range(2000):
        w = rng.uniform(cfg.size_min, cfg.size_max)
        h = rng.uniform(cfg.size_min, cfg.size_max)
        x = rng.uniform(cfg.margin + w / 2, cfg.width - cfg.margin - w / 2)
        y = rng.uniform(cfg.margin + h / 2, cfg.height - cfg.margin - h / 2)
        speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        heading = rng.uniform(-np.pi, np.pi)
        yaw = 0.0
        if rng.uniform() < cfg.turning_fraction:
            yaw = rng.uniform(cfg.yaw_rate_min, cfg.yaw_rate_max) * rng.choice([-1.0, 1.0])
        agent = AgentSpec(x, y, speed * np.cos(heading), speed * np.sin(heading), yaw, w, h,
                          rng.uniform(cfg.intensity_min, cfg.intensity_max))
        if _in_bounds(_centers(agent, cfg.n_frames), agent, cfg):
            return agent
    raise GenerationError("could not place an agent inside the image; shrink speeds or frame count")


def _background(rng, cfg):
    base = np.full((cfg.height, cfg.width), cfg.background)
    if cfg.texture_amplitude <= 0:
        return base
    noise = gaussian_filter(rng.standard_normal((cfg.height, cfg.width)), cfg.texture_scale)
    noise /= noise.std() or 1.0
    return np.clip(base + cfg.texture_amplitude * noise, 0.0, 1.0)


def generate_scene(config, seed, gamma=1.0):
    """Render one scene; deterministic in ``(config, seed, gamma)``.

    Agents come from ``config.agents`` when given, otherwise they are drawn
    at random (constant-velocity or constant-yaw-rate turning motion) such
    that every box stays inside the image for the whole sequence.
    """
    cfg = config
    if cfg.n_frames < OBS_LEN + PRED_LEN:
        raise GenerationError(f"need at least {OBS_LEN + PRED_LEN} frames, got {cfg.n_frames}")
    rng = np.random.default_rng(seed)
    background = _background(rng, cfg)
    agents = list(cfg.agents) or [_random_agent(rng, cfg) for _ in range(cfg.n_objects)]
    if not agents:
        raise GenerationError("a scene needs at least one object")
    paths = [_centers(a, cfg.n_frames) for a in agents]
    tracks = []
    for oid, (a, c) in enumerate(zip(agents, paths)):
        hw, hh = a.width / 2.0, a.height / 2.0
        states = {f: (float(x - hw), float(y - hh), float(x + hw), float(y + hh)) for f, (x, y) in enumerate(c)}
        tracks.append(ObjectTrack(oid, states))
    frames = np.empty((cfg.n_frames, cfg.height, cfg.width))
    for f in range(cfg.n_frames):
        boxes = [(tr.states[f], a.intensity) for tr, a in zip(tracks, agents)]
        frames[f] = quantize(render_frame(background, boxes))
    if gamma != 1.0:
        frames = quantize(apply_gamma(frames, gamma))
    return SceneSequence(frames, tuple(tracks), cfg.frame_rate_hz, float(gamma), seed)


def window_samples(scene, obs_len=OBS_LEN, pred_len=PRED_LEN):
    """Stride-1 windows of ``obs_len + pred_len`` frames.

    Only objects present in every frame of a window become its nodes;
    windows without any such object are dropped.
    """
    span = obs_len + pred_len
    out = []
    for start in range(scene.n_frames - span + 1):
        frames = range(start, start + span)
        ids = tuple(tr.object_id for tr in scene.tracks if all(f in tr.states for f in frames))
        if ids:
            out.append(SampleWindow(start, tuple(range(start, start + obs_len)),
                                    tuple(range(start + obs_len, start + span)), ids))
    return out
