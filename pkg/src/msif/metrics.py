"""Stochastic decoding and best-of-k displacement errors."""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


def sample_trajectories(pred, k, seed):
    """Draw ``k`` samples per node-step from a Gaussian field -> (k, T, N, 2).

    Uses the Cholesky factor of each 2x2 covariance; ``seed`` is anything
    ``numpy.random.default_rng`` accepts.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    mu, sigma, rho = (np.asarray(getattr(a, "data", a), dtype=np.float64) for a in (pred.mu, pred.sigma, pred.rho))
    z = np.random.default_rng(seed).standard_normal((k,) + mu.shape)
    x = mu[..., 0] + sigma[..., 0] * z[..., 0]
    y = mu[..., 1] + sigma[..., 1] * (rho * z[..., 0] + np.sqrt(1.0 - rho * rho) * z[..., 1])
    return np.stack([x, y], axis=-1)


def decode_positions(disp, last_pos, scale):
    """Normalised displacements (..., T, N, 2) -> absolute pixel positions."""
    return last_pos + np.cumsum(np.asarray(disp) * scale, axis=-3)


def node_errors(samples, truth):
    """Best-of-k ADE and FDE for each node: two arrays of shape (N,)."""
    samples = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if samples.shape[1:] != truth.shape:
        raise ValueError(f"samples {samples.shape} do not match truth {truth.shape}")
    err = np.sqrt(((samples - truth) ** 2).sum(-1))        # (k, T, N)
    return err.mean(axis=1).min(axis=0), err[:, -1].min(axis=0)


def ade_fde(samples, truth):
    ade, fde = node_errors(samples, truth)
    return float(ade.mean()), float(fde.mean())


@dataclass
class MetricsReport:
    ade: float
    fde: float
    per_sample: list
    n_samples: int
    sampling_k: int = 20
    config_hash: str = ""
    seed: int = 0
    label: str = ""
    loss_history: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"metrics report not found: {path}")
        d = json.loads(path.read_text())
        d["per_sample"] = [tuple(x) for x in d.get("per_sample", [])]
        return cls(**d)
