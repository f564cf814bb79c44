"""Dense optical flow and per-node flow features.

:func:`dense_flow` is a pyramidal Lucas-Kanade solver: at every pixel it solves
the windowed least-squares form of the linearised brightness-constancy
constraint ``Gx * Vx + Gy * Vy + Gt = 0``, refining coarse-to-fine with
iterative warping. Pixels whose smallest structure-tensor eigenvalue (window
mean) falls below ``min_eig`` are reported as zero flow.
"""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from msif import kernels
from msif import tensor as T

ROI_GRID = 5
DEFAULT_ROI = (25.0, 25.0)


class RoiOutOfBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class FlowParams:
    window: int = 15
    levels: int = 3
    iterations: int = 3
    min_eig: float = 1e-6
    presmooth: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("flow window must be an odd integer >= 3")
        if self.levels < 1 or self.iterations < 1:
            raise ValueError("flow levels and iterations must be >= 1")


@dataclass
class FlowField:
    u: np.ndarray   # x-velocity, px/frame
    v: np.ndarray   # y-velocity, px/frame

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))


def _downsample(img):
    return gaussian_filter(img, 1.0, mode="nearest")[::2, ::2].copy()


def _grid(shape):
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    return xs, ys


def dense_flow(frame_a, frame_b, params=FlowParams()):
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"frame shapes differ or are not 2-D: {a.shape} vs {b.shape}")
    if params.presmooth > 0:
        a = gaussian_filter(a, params.presmooth, mode="nearest")
        b = gaussian_filter(b, params.presmooth, mode="nearest")
    pyr_a, pyr_b = [a], [b]
    for _ in range(params.levels - 1):
        if min(pyr_a[-1].shape) < 2 * params.window:
            break
        pyr_a.append(_downsample(pyr_a[-1]))
        pyr_b.append(_downsample(pyr_b[-1]))

    r = params.window // 2
    area = float(params.window * params.window)
    u = v = None
    ok = None
    for la, lb in zip(reversed(pyr_a), reversed(pyr_b)):
        xs, ys = _grid(la.shape)
        if u is None:
            u = np.zeros(la.shape)
            v = np.zeros(la.shape)
        else:
            u = 2.0 * kernels.bilinear_sample(u, xs / 2.0, ys / 2.0)
            v = 2.0 * kernels.bilinear_sample(v, xs / 2.0, ys / 2.0)
        gy, gx = np.gradient(la)
        sxx = kernels.box_sum(gx * gx, r) / area
        sxy = kernels.box_sum(gx * gy, r) / area
        syy = kernels.box_sum(gy * gy, r) / area
        for _ in range(params.iterations):
            # residual of each window pixel, linearised back to zero displacement
            # so the whole window shares the centre pixel's unknown flow
            gt = kernels.bilinear_sample(lb, xs + u, ys + v) - la - gx * u - gy * v
            sxt = kernels.box_sum(gx * gt, r) / area
            syt = kernels.box_sum(gy * gt, r) / area
            u, v, ok = kernels.lk_solve(sxx, sxy, syy, sxt, syt, params.min_eig)
    u = np.where(ok, u, 0.0)
    v = np.where(ok, v, 0.0)
    return FlowField(u, v)


def scene_flows(frames, params=FlowParams()):
    """Flow for every frame of a sequence: entry t is flow t-1 -> t, entry 0 is zero.

    Values are rounded through float32 so they match the ``.flo`` cache.
    """
    frames = np.asarray(frames)
    out = [FlowField.zeros(frames.shape[1:])]
    for t in range(1, len(frames)):
        f = dense_flow(frames[t - 1], frames[t], params)
        out.append(FlowField(f.u.astype(np.float32).astype(np.float64),
                             f.v.astype(np.float32).astype(np.float64)))
    return out


def _cell_matrix(lo, extent, n_pixels, grid):
    """Averaging matrix (grid x n_pixels) for ``grid`` equal cells over [lo, lo+extent)."""
    m = np.zeros((grid, n_pixels))
    edges = lo + extent * np.arange(grid + 1) / grid
    for k in range(grid):
        first = int(np.floor(edges[k]))
        last = max(first + 1, int(np.ceil(edges[k + 1])))
        idx = np.clip(np.arange(first, last), 0, n_pixels - 1)
        np.add.at(m[k], idx, 1.0 / len(idx))
    return m


def roi_pool_flow(flow, center, box=None, grid=ROI_GRID):
    """Average-pool the two flow channels over a box onto a ``grid x grid`` raster.

    The box (width, height) is centred on ``center``; a missing or degenerate
    box falls back to 25 x 25 px. Cells reaching past the image reuse the
    border pixels. Returns ``2 * grid**2`` values, all u cells then all v
    cells, each raster row-major.
    """
    H, W = flow.shape
    cx, cy = center
    if not (0 <= cx < W and 0 <= cy < H):
        raise RoiOutOfBoundsError(f"ROI center ({cx}, {cy}) outside {W}x{H} image")
    bw, bh = box if box is not None else DEFAULT_ROI
    if not (bw > 0 and bh > 0):
        bw, bh = DEFAULT_ROI
    ry = _cell_matrix(cy - bh / 2.0, bh, H, grid)
    rx = _cell_matrix(cx - bw / 2.0, bw, W, grid)
    pu = ry @ flow.u @ rx.T
    pv = ry @ flow.v @ rx.T
    return np.concatenate([pu.ravel(), pv.ravel()])


def flow_node_attrs(pooled, projection):
    """Learned linear map from pooled flow (..., 50) to node attributes (..., 2)."""
    pooled = T.as_tensor(pooled)
    if pooled.ndim == 1:
        return T.reshape(T.matmul(T.reshape(pooled, (1, -1)), projection), (-1,))
    return T.matmul(pooled, projection)
