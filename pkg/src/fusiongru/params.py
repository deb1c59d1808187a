"""Named parameter arrays."""

from __future__ import annotations

import numpy as np

from . import numerics as nx


class ParameterStore:
    """Mapping of parameter name to float64 array.

    A store can be frozen once training is done; a frozen store refuses
    updates and may be shared between threads for inference.
    """

    def __init__(self, arrays=None):
        self._arrays = {name: np.array(v, dtype=np.float64) for name, v in (arrays or {}).items()}
        self._frozen = False

    @classmethod
    def initialize(cls, shapes, rng):
        """Glorot-uniform weights, zero biases.

        Arrays with one axis are biases; everything else is a weight of
        shape (fan_out, fan_in).
        """
        arrays = {}
        for name, shape in shapes.items():
            if len(shape) == 1:
                arrays[name] = np.zeros(shape)
            else:
                fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                arrays[name] = rng.uniform(-limit, limit, size=shape)
        return cls(arrays)

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        if self._frozen:
            raise RuntimeError("parameter store is frozen")
        value = np.array(value, dtype=np.float64)
        if name in self._arrays and value.shape != self._arrays[name].shape:
            raise ValueError(f"{name}: shape {value.shape} does not match {self._arrays[name].shape}")
        self._arrays[name] = value

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self):
        return list(self._arrays)

    def shapes(self):
        return {name: a.shape for name, a in self._arrays.items()}

    def size(self):
        return int(sum(a.size for a in self._arrays.values()))

    def freeze(self):
        self._frozen = True
        for a in self._arrays.values():
            a.flags.writeable = False
        return self

    @property
    def frozen(self):
        return self._frozen

    def copy(self):
        return ParameterStore({name: a.copy() for name, a in self._arrays.items()})

    def zeros_like(self):
        return {name: np.zeros_like(a) for name, a in self._arrays.items()}

    def bind(self, tape=None):
        """Tensors for a forward pass; registered on ``tape`` when given."""
        if tape is None:
            return {name: nx.Tensor(a, name=name) for name, a in self._arrays.items()}
        return tape.watch(self._arrays)

    def to_dict(self):
        return dict(self._arrays)

    def equals(self, other):
        return self.shapes() == other.shapes() and all(
            np.array_equal(a, other[name]) for name, a in self._arrays.items()
        )
