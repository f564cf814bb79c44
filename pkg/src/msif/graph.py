"""Spatio-temporal interaction graphs.

Edges use the reciprocal-distance kernel ``1 / (||p_i - p_j|| + eps)`` with a
zeroed diagonal; self-influence enters only through the ``+ I`` of the
symmetric normalisation ``D^-1/2 (A + I) D^-1/2``.
"""
from dataclasses import dataclass

import numpy as np

EPS = 1e-6


@dataclass(frozen=True)
class SpatioTemporalGraph:
    attrs: object           # (T, N, C) array or Tensor
    adj: np.ndarray         # (T, N, N)
    adj_norm: np.ndarray    # (T, N, N)

    @property
    def n_nodes(self):
        return self.adj.shape[1]


def kernel_adjacency(positions, eps=EPS):
    p = np.asarray(positions, dtype=np.float64)
    if p.ndim != 3 or p.shape[-1] != 2:
        raise ValueError(f"positions must be (T, N, 2), got {p.shape}")
    dx = p[:, :, None, 0] - p[:, None, :, 0]
    dy = p[:, :, None, 1] - p[:, None, :, 1]
    a = 1.0 / (np.sqrt(dx * dx + dy * dy) + eps)
    idx = np.arange(p.shape[1])
    a[:, idx, idx] = 0.0
    return a


def normalize_adjacency(adj):
    a = np.asarray(adj, dtype=np.float64)
    n = a.shape[-1]
    if n == 0:
        raise ValueError("cannot normalise an adjacency with zero nodes")
    a_hat = a + np.eye(n)
    # sequential row sums keep the result identical to a dense reference loop
    deg = np.zeros(a_hat.shape[:-1])
    for j in range(n):
        deg = deg + a_hat[..., j]
    dinv = 1.0 / np.sqrt(deg)
    return dinv[..., :, None] * a_hat * dinv[..., None, :]


def build_graph(attrs, positions, eps=EPS):
    """Graph over ``positions`` (T, N, 2) carrying ``attrs`` (T, N, C) untouched."""
    shape = getattr(attrs, "shape", None)
    pos = np.asarray(positions, dtype=np.float64)
    if shape is None or tuple(shape[:2]) != pos.shape[:2]:
        raise ValueError(f"attrs {shape} and positions {pos.shape} disagree on (T, N)")
    adj = kernel_adjacency(pos, eps)
    return SpatioTemporalGraph(attrs, adj, normalize_adjacency(adj))


def block_diagonal(mats):
    """Stack per-sample (T, N_k, N_k) matrices into one (T, sum N_k, sum N_k)."""
    T = mats[0].shape[0]
    total = sum(m.shape[1] for m in mats)
    out = np.zeros((T, total, total))
    o = 0
    for m in mats:
        n = m.shape[1]
        out[:, o:o + n, o:o + n] = m
        o += n
    return out
