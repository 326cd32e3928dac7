"""Parameter registry shared by every trainable component of a model."""

from __future__ import annotations

import math

import numpy as np

from .rng import Rng
from .tensor import Parameter, Tensor


class ParamBank:
    """Owns every Parameter of a model: unique names, seeded init, state I/O."""

    def __init__(self, rng: Rng, dtype=np.float32):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, shape, init: str = "uniform", fan_in: int | None = None) -> Tensor:
        """Register a parameter; init is 'uniform' (+-1/sqrt(fan_in)), 'zeros' or 'ones'."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        shape = tuple(int(s) for s in shape)
        if init == "uniform":
            if fan_in is None:
                fan_in = shape[-1] if len(shape) < 3 else int(np.prod(shape[1:]))
            bound = 1.0 / math.sqrt(fan_in)
            data = self.rng.derive("init", name).uniform(-bound, bound, shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init: {init}")
        tensor = Tensor(data, dtype=self.dtype)
        self._params[name] = Parameter(name, tensor)
        return tensor

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def zero_grads(self):
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        """Replace parameter values; shapes must match exactly."""
        for name, p in self._params.items():
            if name not in state:
                raise KeyError(f"missing parameter in state: {name}")
            arr = state[name]
            if tuple(arr.shape) != tuple(p.value.shape):
                raise ValueError(
                    f"shape mismatch for {name}: model {tuple(p.value.shape)} vs state {tuple(arr.shape)}"
                )
            p.value.data = np.asarray(arr, dtype=self.dtype).copy()
        extra = set(state) - set(self._params)
        if extra:
            raise KeyError(f"unexpected parameter in state: {sorted(extra)[0]}")
