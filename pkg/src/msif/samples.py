"""Turn scenes into model-ready samples and batch them.

A sample is one stride-1 window: 8 observed and 12 future frames for the
objects present throughout. Positions are box centers in pixels; the network
sees per-step displacements of positions normalised by the image size.
Samples are batched by stacking their nodes: adjacency becomes block
diagonal, so nodes of different samples never exchange messages.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from msif.channels import resize_frames
from msif.data.synth import window_samples
from msif.flow import FlowParams, roi_pool_flow, scene_flows
from msif.graph import block_diagonal, build_graph


def num_workers():
    try:
        n = int(os.environ.get("MSIF_NUM_WORKERS", "0"))
    except ValueError:
        n = 0
    return max(1, n if n > 0 else min(4, os.cpu_count() or 1))


def parallel_map(fn, items):
    items = list(items)
    n = num_workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


@dataclass
class Sample:
    scene: int
    start: int
    node_ids: tuple
    positions: np.ndarray      # (obs+pred, N, 2) pixel centers
    traj_attrs: np.ndarray     # (obs, N, 2) normalised displacements, first step zero
    truth_disp: np.ndarray     # (pred, N, 2) normalised displacements
    flow_pooled: np.ndarray    # (obs, N, 50) ROI-pooled flow over image size
    adj_norm: np.ndarray       # (obs, N, N)
    scale: np.ndarray          # (2,) image width, height
    obs_len: int = 8

    @property
    def n_nodes(self):
        return len(self.node_ids)

    @property
    def last_pos(self):
        return self.positions[self.obs_len - 1]

    @property
    def truth_pos(self):
        return self.positions[self.obs_len:]

    @property
    def frames(self):
        return range(self.start, self.start + self.obs_len)

    def permuted(self, perm):
        perm = np.asarray(perm)
        return Sample(self.scene, self.start, tuple(np.asarray(self.node_ids)[perm]),
                      self.positions[:, perm], self.traj_attrs[:, perm], self.truth_disp[:, perm],
                      self.flow_pooled[:, perm], self.adj_norm[:, perm][:, :, perm], self.scale, self.obs_len)


@dataclass
class PreparedData:
    samples: list
    images: list          # per scene, (F, h, w) resized frames


def scene_samples(scene, scene_idx, obs_len=8, pred_len=12, flow_params=None):
    flows = scene.flows
    if flows is None:
        flows = scene_flows(scene.frames, flow_params or FlowParams())
    scale = np.array([scene.width, scene.height], dtype=np.float64)
    out = []
    for win in window_samples(scene, obs_len, pred_len):
        frames = list(win.observed) + list(win.future)
        tracks = [scene.track(i) for i in win.node_ids]
        pos = np.array([[tr.center(f) for tr in tracks] for f in frames])
        norm = pos / scale
        disp = np.diff(norm, axis=0)
        attrs = np.concatenate([np.zeros((1,) + disp.shape[1:]), disp[:obs_len - 1]])
        pooled = np.empty((obs_len, len(tracks), 50))
        for t, f in enumerate(win.observed):
            fl = flows[f]
            for n, tr in enumerate(tracks):
                x_tl, y_tl, x_br, y_br = tr.box(f)
                p = roi_pool_flow(fl, tr.center(f), (x_br - x_tl, y_br - y_tl))
                pooled[t, n, :25] = p[:25] / scale[0]
                pooled[t, n, 25:] = p[25:] / scale[1]
        graph = build_graph(attrs, pos[:obs_len])
        out.append(Sample(scene_idx, win.start, win.node_ids, pos, attrs, disp[obs_len - 1:],
                          pooled, graph.adj_norm, scale, obs_len))
    return out


def prepare(scenes, config):
    """Samples for every window of every scene plus resized frames for the image channel."""
    fp = FlowParams(window=config.flow_window, levels=config.flow_levels, iterations=config.flow_iters)
    per_scene = parallel_map(
        lambda item: scene_samples(item[1], item[0], config.obs_len, config.pred_len, fp), enumerate(scenes))
    samples = [s for group in per_scene for s in group]
    images = [resize_frames(sc.frames, config.image_size) if "image" in config.channels else None
              for sc in scenes]
    return PreparedData(samples, images)


@dataclass
class Batch:
    traj_attrs: np.ndarray     # (obs, M, 2)
    flow_pooled: np.ndarray    # (obs, M, 50)
    adj_norm: np.ndarray       # (obs, M, M)
    images: np.ndarray         # (U, h, w) unique observed frames, or None
    image_index: np.ndarray    # (obs, M) row of ``images`` for each node-step
    truth_disp: np.ndarray     # (pred, M, 2)
    last_pos: np.ndarray       # (M, 2)
    truth_pos: np.ndarray      # (pred, M, 2)
    scale: np.ndarray          # (M, 2)
    node_sample: np.ndarray    # (M,) position of each node's sample in the batch
    n_samples: int

    @property
    def n_nodes(self):
        return self.node_sample.shape[0]


def make_batch(samples, images=None):
    """Stack samples along the node axis; ``images`` is the per-scene frame list."""
    cat = lambda name, axis=1: np.concatenate([getattr(s, name) for s in samples], axis=axis)
    node_sample = np.concatenate([np.full(s.n_nodes, k) for k, s in enumerate(samples)])
    frames, image_index = None, None
    if images is not None and all(images[s.scene] is not None for s in samples):
        keys, rows = {}, []
        per_sample = np.empty((len(samples), samples[0].obs_len), dtype=np.intp)
        for k, s in enumerate(samples):
            for t, f in enumerate(s.frames):
                key = (s.scene, f)
                if key not in keys:
                    keys[key] = len(rows)
                    rows.append(images[s.scene][f])
                per_sample[k, t] = keys[key]
        frames = np.stack(rows)
        image_index = per_sample[node_sample].T
    return Batch(
        traj_attrs=cat("traj_attrs"),
        flow_pooled=cat("flow_pooled"),
        adj_norm=block_diagonal([s.adj_norm for s in samples]),
        images=frames,
        image_index=image_index,
        truth_disp=cat("truth_disp"),
        last_pos=np.concatenate([s.last_pos for s in samples]),
        truth_pos=cat("truth_pos"),
        scale=np.concatenate([np.tile(s.scale, (s.n_nodes, 1)) for s in samples]),
        node_sample=node_sample,
        n_samples=len(samples),
    )
