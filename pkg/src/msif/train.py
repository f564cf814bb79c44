"""Gaussian NLL training with Adam, checkpointing and best-of-k evaluation."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from msif import tensor as T
from msif.checkpoint import load_checkpoint, save_checkpoint
from msif.config import ExperimentConfig
from msif.metrics import MetricsReport, decode_positions, node_errors, sample_trajectories
from msif.model import Msif
from msif.samples import make_batch, prepare
from msif.tensor import ShapeError

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class EmptySplitError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


class IncompatibleCheckpointError(ValueError):
    pass


# -- loss and optimiser ------------------------------------------------

def nll_loss(pred, truth):
    """Mean negative log-density of ``truth`` (T, N, 2) under the predicted field."""
    truth = T.as_tensor(truth)
    if truth.shape != pred.mu.shape:
        raise ShapeError(f"truth {truth.shape} does not match prediction {pred.mu.shape}")
    d = truth - pred.mu
    sx = T.getitem(pred.sigma, (Ellipsis, 0))
    sy = T.getitem(pred.sigma, (Ellipsis, 1))
    zx = T.getitem(d, (Ellipsis, 0)) / sx
    zy = T.getitem(d, (Ellipsis, 1)) / sy
    rho = pred.rho
    one_m = 1.0 - rho * rho
    z = zx * zx + zy * zy - 2.0 * rho * zx * zy
    nll = T.log(sx) + T.log(sy) + 0.5 * T.log(one_m) + z / (2.0 * one_m) + LOG_2PI
    return T.mean(nll)


def lr_schedule(epoch, base_lr, every=50, factor=0.1):
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * factor ** (epoch // every)


def adam_state():
    return {"t": 0, "m": {}, "v": {}}


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update of ``params`` (name -> array); returns (params, state)."""
    state["t"] += 1
    t = state["t"]
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state["m"].setdefault(name, np.zeros_like(p))
        v = state["v"].setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)
    return params, state


# -- data splits -------------------------------------------------------

def split_scenes(n_scenes, seed=0):
    """Scene indices for a 7:2:1 train/val/test split."""
    if n_scenes < 3:
        raise EmptySplitError(f"need at least 3 scenes for train/val/test, got {n_scenes}")
    n_test = max(1, round(0.1 * n_scenes))
    n_val = max(1, round(0.2 * n_scenes))
    order = np.random.default_rng(seed).permutation(n_scenes)
    test = sorted(order[:n_test].tolist())
    val = sorted(order[n_test:n_test + n_val].tolist())
    train = sorted(order[n_test + n_val:].tolist())
    if not train:
        raise EmptySplitError("training split is empty")
    return {"train": train, "val": val, "test": test}


def select(samples, scenes):
    keep = set(scenes)
    return [s for s in samples if s.scene in keep]


def batches(samples, size):
    for i in range(0, len(samples), size):
        yield samples[i:i + size]


def mean_nll(model, prepared, samples, batch_size):
    if not samples:
        raise EmptySplitError("no samples to evaluate")
    total, count = 0.0, 0
    with T.no_grad():
        for chunk in batches(samples, batch_size):
            b = make_batch(chunk, prepared.images)
            n = b.truth_disp.shape[0] * b.n_nodes
            total += nll_loss(model(b), b.truth_disp).item() * n
            count += n
    return total / count


# -- checkpoints -------------------------------------------------------

def save_training_state(path, model, opt_state, epoch, history, extra=None):
    arrays = dict(model.state_dict())
    for name in model.state_dict():
        if name in opt_state["m"]:
            arrays[f"adam.m.{name}"] = opt_state["m"][name]
            arrays[f"adam.v.{name}"] = opt_state["v"][name]
    meta = {"config": model.config.to_dict(), "epoch": epoch, "adam_t": opt_state["t"],
            "history": history, "config_hash": model.config.hash()}
    meta.update(extra or {})
    save_checkpoint(path, arrays, meta)


def load_model(path, config=None):
    """Rebuild a model from a checkpoint, checking it against ``config`` if given."""
    arrays, meta = load_checkpoint(path)
    saved = ExperimentConfig.from_dict(meta["config"])
    if config is not None and config.architecture() != saved.architecture():
        diff = sorted(k for k, v in config.architecture().items() if saved.architecture()[k] != v)
        raise IncompatibleCheckpointError(f"checkpoint {path} is incompatible with the config ({', '.join(diff)})")
    cfg = config or saved
    model = Msif(cfg)
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    try:
        model.load_state_dict(params)
    except ShapeError as exc:
        raise IncompatibleCheckpointError(str(exc)) from None
    return model, arrays, meta


# -- training loop -----------------------------------------------------

@dataclass
class TrainResult:
    model: Msif
    history: list                 # rows (epoch, train_nll, val_nll)
    split: dict
    best_epoch: int
    artifacts: list = field(default_factory=list)
    best_state: dict = None       # parameters at the best validation epoch (None if resumed without improving)


def write_loss_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_nll", "val_nll"])
        for e, tr, va in history:
            w.writerow([e, repr(tr), repr(va)])


def _diagnostics(model, epoch, step, lr, loss):
    norms = {k: float(np.linalg.norm(p.data)) for k, p in model.named_parameters()}
    worst = max(norms, key=lambda k: norms[k] if np.isfinite(norms[k]) else np.inf)
    return (f"non-finite loss {loss} at epoch {epoch} step {step} (lr={lr:g}); "
            f"largest parameter norm: {worst}={norms[worst]:.3g}")


def train(config, scenes=None, out_dir=None, prepared=None, resume=None, split=None):
    """Minibatch NLL descent; epoch 0 records the untrained losses.

    Writes ``loss.csv``, ``best.ckpt`` and ``last.ckpt`` under ``out_dir``
    when given. ``resume`` continues from a ``last.ckpt`` exactly.
    """
    if prepared is None:
        prepared = prepare(scenes, config)
    n_scenes = len(prepared.images)
    split = split or split_scenes(n_scenes, config.seed)
    train_s = select(prepared.samples, split["train"])
    val_s = select(prepared.samples, split["val"])
    if not train_s:
        raise EmptySplitError("no training samples (scenes too short or empty)")
    if not val_s:
        raise EmptySplitError("no validation samples")

    model = Msif(config)
    opt = adam_state()
    history, start = [], 1
    best_val, best_epoch, best_state = math.inf, 0, None
    if resume is not None:
        model, arrays, meta = load_model(resume, config)
        opt["t"] = meta["adam_t"]
        for name in model.state_dict():
            if f"adam.m.{name}" in arrays:
                opt["m"][name] = arrays[f"adam.m.{name}"].copy()
                opt["v"][name] = arrays[f"adam.v.{name}"].copy()
        history = [tuple(r) for r in meta["history"]]
        start = meta["epoch"] + 1
        best_epoch = meta.get("best_epoch", 0)
        best_val = meta.get("best_val", math.inf)
    else:
        row = (0, mean_nll(model, prepared, train_s, config.batch_size),
               mean_nll(model, prepared, val_s, config.batch_size))
        history.append(row)
        best_val, best_state = row[2], model.state_dict()
        log.info("epoch 0: train %.5f val %.5f", row[1], row[2])

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    params = dict(model.named_parameters())

    def save_best(epoch):
        if out is not None:
            save_training_state(out / "best.ckpt", model, opt, epoch, history,
                                {"best_epoch": epoch, "best_val": best_val, "split": split})

    if out is not None and resume is None:
        save_best(0)
    for epoch in range(start, config.epochs + 1):
        lr = lr_schedule(epoch - 1, config.learning_rate, config.lr_decay_every, config.lr_decay_factor)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_s))
        shuffled = [train_s[i] for i in order]
        total, count = 0.0, 0
        for step, chunk in enumerate(batches(shuffled, config.batch_size)):
            b = make_batch(chunk, prepared.images)
            model.zero_grad()
            loss = nll_loss(model(b), b.truth_disp)
            if not np.isfinite(loss.item()):
                raise DivergenceError(_diagnostics(model, epoch, step, lr, loss.item()))
            T.backward(loss)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError(_diagnostics(model, epoch, step, lr, "gradient"))
            adam_step({k: p.data for k, p in params.items()}, grads, opt, lr,
                      config.beta1, config.beta2, config.adam_eps)
            n = b.truth_disp.shape[0] * b.n_nodes
            total += loss.item() * n
            count += n
        val = mean_nll(model, prepared, val_s, config.batch_size)
        if not np.isfinite(val):
            raise DivergenceError(_diagnostics(model, epoch, "val", lr, val))
        history.append((epoch, total / count, val))
        log.info("epoch %d: lr %g train %.5f val %.5f", epoch, lr, total / count, val)
        if val < best_val:
            best_val, best_epoch, best_state = val, epoch, model.state_dict()
            save_best(epoch)
        if out is not None:
            save_training_state(out / "last.ckpt", model, opt, epoch, history,
                                {"best_epoch": best_epoch, "best_val": best_val, "split": split})
    artifacts = []
    if out is not None:
        write_loss_csv(out / "loss.csv", history)
        artifacts = [out / "loss.csv", out / "best.ckpt"]
        if (out / "last.ckpt").exists():
            artifacts.append(out / "last.ckpt")
    return TrainResult(model, history, split, best_epoch, artifacts, best_state)


# -- evaluation --------------------------------------------------------

def evaluate(model, prepared, samples, k=20, seed=0, batch_size=64, label=""):
    """Best-of-k ADE/FDE in pixels; sample ``i`` draws from ``default_rng([seed, i])``."""
    if not samples:
        raise EmptySplitError("no samples to evaluate")
    per_sample, ade_all, fde_all = [], [], []
    idx = 0
    with T.no_grad():
        for chunk in batches(samples, batch_size):
            b = make_batch(chunk, prepared.images)
            mu, sigma, rho = (a.data for a in _field(model(b)))
            for j in range(b.n_samples):
                nodes = b.node_sample == j
                field_j = _Field(mu[:, nodes], sigma[:, nodes], rho[:, nodes])
                draws = sample_trajectories(field_j, k, [seed, idx])
                pos = decode_positions(draws, b.last_pos[nodes], b.scale[nodes])
                ade, fde = node_errors(pos, b.truth_pos[:, nodes])
                per_sample.append((float(ade.mean()), float(fde.mean())))
                ade_all.append(ade)
                fde_all.append(fde)
                idx += 1
    ade_all, fde_all = np.concatenate(ade_all), np.concatenate(fde_all)
    return MetricsReport(float(ade_all.mean()), float(fde_all.mean()), per_sample, len(per_sample), k,
                         model.config.hash(), model.config.seed, label)


@dataclass
class _Field:
    mu: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray


def _field(pred):
    return pred.mu, pred.sigma, pred.rho


def constant_position_ade(samples):
    """ADE/FDE of predicting every future position as the last observed one."""
    errs = []
    for s in samples:
        e = np.sqrt(((s.truth_pos - s.last_pos) ** 2).sum(-1))
        errs.append((e.mean(axis=0), e[-1]))
    return (float(np.concatenate([a for a, _ in errs]).mean()),
            float(np.concatenate([f for _, f in errs]).mean()))
