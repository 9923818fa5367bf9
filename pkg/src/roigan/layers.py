"""Minimal module system: parameter discovery, train/eval mode, state dicts."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor, get_default_dtype


class Module:
    """Base class. Parameters, buffers and child modules are found by attribute scan."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        """Yield (dotted path, parameter) pairs. A shared parameter appears under every path."""
        for name, value in self._children():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path + ".")

    def parameters(self) -> list[Parameter]:
        seen, out = set(), []
        for _, p in self.named_parameters():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            if name.startswith("running_") and isinstance(value, np.ndarray):
                yield f"{prefix}{name}", value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def get_submodule(self, path: str) -> "Module":
        mod = self
        for part in path.split(".") if path else []:
            mod = mod[int(part)] if isinstance(mod, (list, tuple)) else getattr(mod, part)
        return mod

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy values in place so that shared storage stays shared."""
        own = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        for name, target in list(own.items()) + [(k, v) for k, v in own_buffers.items()]:
            if name not in state:
                raise KeyError(f"missing entry {name!r} in state dict")
            arr = target.data if isinstance(target, Parameter) else target
            if arr.shape != state[name].shape:
                raise ValueError(f"shape mismatch for {name!r}: have {arr.shape}, got {state[name].shape}")
            arr[...] = state[name]


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 4, stride: int = 2, padding: int = 1, bias: bool = True):
        super().__init__()
        dt = get_default_dtype()
        self.weight = Parameter(np.zeros((out_ch, in_ch, kernel, kernel), dtype=dt))
        self.bias = Parameter(np.zeros(out_ch, dtype=dt)) if bias else None
        self.stride, self.padding = stride, padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 4, stride: int = 2, padding: int = 1):
        super().__init__()
        dt = get_default_dtype()
        self.weight = Parameter(np.zeros((in_ch, out_ch, kernel, kernel), dtype=dt))
        self.bias = Parameter(np.zeros(out_ch, dtype=dt))
        self.stride, self.padding = stride, padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dt = get_default_dtype()
        self.gamma = Parameter(np.ones(channels, dtype=dt))
        self.beta = Parameter(np.zeros(channels, dtype=dt))
        self.running_mean = np.zeros(channels, dtype=dt)
        self.running_var = np.ones(channels, dtype=dt)
        self.momentum, self.eps = momentum, eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        dt = get_default_dtype()
        self.weight = Parameter(np.zeros((out_features, in_features), dtype=dt))
        self.bias = Parameter(np.zeros(out_features, dtype=dt))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


def init_parameters(net: Module, rng: np.random.Generator, std: float = 0.02) -> None:
    """Weights ~ N(0, std), batch-norm gains ~ N(1, std), biases and shifts 0.

    Draws happen in ``named_parameters`` order, so the result depends only on
    the seed. Already-seen (shared) parameters are drawn once.
    """
    seen: set[int] = set()
    for name, p in net.named_parameters():
        if id(p) in seen:
            continue
        seen.add(id(p))
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            p.data[...] = rng.normal(1.0, std, p.shape)
        elif leaf in ("bias", "beta") or leaf.startswith("b_") or leaf == "b":
            p.data[...] = 0
        else:
            p.data[...] = rng.normal(0.0, std, p.shape)


def set_parameter(net: Module, path: str, param: Parameter) -> None:
    owner_path, _, leaf = path.rpartition(".")
    owner = net.get_submodule(owner_path)
    current = getattr(owner, leaf)
    if not isinstance(current, Parameter):
        raise KeyError(f"{path!r} is not a parameter")
    setattr(owner, leaf, param)
