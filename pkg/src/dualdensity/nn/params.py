"""Parameter container and module base class.

Modules hold parameters plus a forward cache, so the pattern is always
``y = m.forward(x, train); dx = m.backward(dy)`` with gradients
accumulated on the parameters.  Everything is single-threaded: one
forward's cache feeds exactly one backward.
"""

import numpy as np


class Param:
    """A learnable (or frozen) tensor with an optional gradient buffer.

    ``requires_grad=False`` marks state that is serialized with
    checkpoints but never updated by the optimizer (running statistics).
    """

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad=True):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad

    def add_grad(self, g):
        if not self.requires_grad:
            return
        g = np.asarray(g)
        if g.shape != self.value.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match value shape {self.value.shape}"
            )
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Param(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Module:
    """Base class: parameter discovery by attribute walk, in declaration order."""

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def named_params(self, prefix=""):
        """Yield (name, Param) pairs for this module and all submodules."""
        for attr, val in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}" if prefix else attr
            if isinstance(val, Param):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_params(prefix=name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(prefix=f"{name}.{i}.")
                    elif isinstance(item, Param):
                        yield f"{name}.{i}", item

    def params(self, trainable_only=False):
        out = [p for _, p in self.named_params()]
        if trainable_only:
            out = [p for p in out if p.requires_grad]
        return out

    def zero_grad(self):
        for p in self.params():
            p.grad = None

    def n_params(self, trainable_only=True):
        return sum(p.value.size for p in self.params(trainable_only))


def uniform_init(rng, shape, fan_in, dtype):
    """Weight init: uniform in +-1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
