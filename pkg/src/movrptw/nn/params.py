"""Named parameter storage with Adam state and non-trainable buffers."""

import numpy as np

from .autodiff import Tensor


class GradientError(RuntimeError):
    """A gradient turned non-finite; the message names the parameter."""


class ParamStore:
    """Ordered collection of trainable tensors plus optimizer moments.

    Buffers hold state that is saved but not trained (batch-norm running
    statistics). Moments start at zero and the step counter at 0.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(value, dtype=self.dtype))
        self.params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise KeyError(f"buffer {name!r} already registered")
        self.buffers[name] = np.asarray(value, dtype=self.dtype)
        return self.buffers[name]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def adam_step(self, lr: float, decay: float = 0.0,
                  beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> float:
        """One Adam update with bias correction and lr_t = lr / (1 + decay * t).

        Missing gradients count as zero; non-finite gradients raise with the
        parameter's name. Gradients are cleared afterwards. Returns lr_t.
        """
        self.step_count += 1
        t = self.step_count
        lr_t = lr / (1.0 + decay * t)
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise GradientError(f"non-finite gradient in parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p.data -= (lr_t * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
        self.zero_grads()
        return lr_t

    def copy(self, include_optimizer: bool = False) -> "ParamStore":
        out = ParamStore(dtype=self.dtype)
        for name, t in self.params.items():
            out.add_param(name, t.data.copy())
        for name, b in self.buffers.items():
            out.add_buffer(name, b.copy())
        if include_optimizer:
            for name in self.params:
                out._m[name] = self._m[name].copy()
                out._v[name] = self._v[name].copy()
            out.step_count = self.step_count
        return out

    def load_values(self, other: "ParamStore") -> None:
        """Copy parameter and buffer values from a shape-identical store."""
        for name, t in self.params.items():
            t.data[...] = other.params[name].data
        for name, b in self.buffers.items():
            b[...] = other.buffers[name]

    def cast(self, dtype) -> "ParamStore":
        out = ParamStore(dtype=dtype)
        for name, t in self.params.items():
            out.add_param(name, t.data.astype(dtype))
        for name, b in self.buffers.items():
            out.add_buffer(name, b.astype(dtype))
        return out

    def assert_finite(self) -> None:
        for name, t in self.params.items():
            if not np.isfinite(t.data).all():
                raise GradientError(f"non-finite values in parameter {name!r}")


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
