"""Parameter containers."""
from collections import OrderedDict

import numpy as np

from msif.tensor import ShapeError, Tensor


class Module:
    """Base class collecting learnable tensors from attributes.

    Attributes holding a ``Tensor`` with ``requires_grad`` are parameters;
    attributes holding a ``Module`` (or a list of them) are walked
    recursively, giving dotted path-names such as ``tpc.res.0.kernel``.
    """

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters())

    def load_state_dict(self, state):
        own = OrderedDict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ShapeError(f"parameter sets differ: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"parameter {k}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def param(data, name=None):
    return Tensor(data, requires_grad=True, name=name)
