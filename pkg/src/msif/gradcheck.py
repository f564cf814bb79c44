"""Central finite-difference gradient checks."""
import numpy as np

from msif import tensor as T


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is ~0 from dividing rounding
    noise by zero.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(loss_fn, p, h=1e-5):
    g = np.zeros_like(p.data)
    flat, gflat = p.data.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss_fn().item()
        flat[i] = old - h
        down = loss_fn().item()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return g


def check_gradients(loss_fn, named_params, h=1e-5, floor=1e-6):
    """Max relative error per parameter between backprop and central differences.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    """
    named_params = list(named_params)
    for _, p in named_params:
        p.grad = None
    T.backward(loss_fn())
    out = {}
    with T.no_grad():
        for name, p in named_params:
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            out[name] = float(relative_error(analytic, numeric_grad(loss_fn, p, h), floor).max())
    return out
