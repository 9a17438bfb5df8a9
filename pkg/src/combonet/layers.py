"""Layer building blocks and parameter accounting.

Modules register parameters and submodules simply by attribute assignment
(insertion order is the traversal order, so reports and checkpoints are
deterministic). Only two primitive layers exist: convolution and batch
normalization; everything larger is composed from them.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal container: tracks parameters, buffers, submodules, train mode."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _entries(self):
        for name, value in vars(self).items():
            if name.startswith("_") or name == "training":
                continue
            yield name, value

    def named_parameters(self, prefix: str = ""):
        for name, value in self._entries():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, value in self._entries():
            path = f"{prefix}{name}"
            if isinstance(value, np.ndarray):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{path}.{i}.")

    def modules(self):
        yield self
        for _, value in self._entries():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, flag: bool = True):
        for m in self.modules():
            m.training = flag
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # -- checkpoint support -------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: buf for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own_params = dict(self.named_parameters())
        own_bufs = dict(self.named_buffers())
        missing = (set(own_params) | set(own_bufs)) - set(state)
        extra = set(state) - (set(own_params) | set(own_bufs))
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={sorted(missing)} "
                           f"unexpected={sorted(extra)}")
        for name, p in own_params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {p.data.shape}")
            p.data = arr.copy()
        for name, buf in own_bufs.items():
            arr = np.asarray(state[name], dtype=buf.dtype)
            if arr.shape != buf.shape:
                raise ValueError(f"shape mismatch for buffer {name}")
            buf[...] = arr


class Conv(Module):
    """k^d convolution with bias, He-normal initialised."""

    def __init__(self, dims: int, c_in: int, c_out: int, rng: np.random.Generator,
                 k: int = 3, dtype=np.float32):
        super().__init__()
        if c_in <= 0 or c_out <= 0:
            raise ValueError(f"channel counts must be positive, got {c_in}->{c_out}")
        shape = (c_out, c_in) + (k,) * dims
        fan_in = c_in * k ** dims
        std = np.sqrt(2.0 / fan_in)
        self.w = Tensor((rng.standard_normal(shape) * std).astype(dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv(x, self.w, self.b)


class BatchNorm(Module):
    def __init__(self, c: int, dtype=np.float32, momentum: float = 0.1,
                 eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self._momentum = momentum
        self._eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.batchnorm(x, self.gamma, self.beta,
                           self.running_mean, self.running_var,
                           self.training, self._momentum, self._eps)


class ConvBlock(Module):
    """`layers` repetitions of conv(3^d) + BatchNorm + ReLU.

    The first convolution maps c_in -> c_out, the rest keep c_out. Spatial
    extents are preserved (stride 1, same padding).
    """

    def __init__(self, dims: int, c_in: int, c_out: int, rng: np.random.Generator,
                 layers: int = 3, dtype=np.float32):
        super().__init__()
        if layers < 1:
            raise ValueError("a conv block needs at least one layer")
        self.convs = []
        self.norms = []
        cur = c_in
        for _ in range(layers):
            self.convs.append(Conv(dims, cur, c_out, rng, dtype=dtype))
            self.norms.append(BatchNorm(c_out, dtype=dtype))
            cur = c_out

    def forward(self, x: Tensor) -> Tensor:
        for conv, norm in zip(self.convs, self.norms):
            x = T.relu(norm(conv(x)))
        return x


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

class ParamReport:
    """Per-layer parameter counts with separable counting bases.

    Rows are (name, count) in traversal order. Because the convention the
    reference totals were computed under is not recoverable, the report
    exposes three bases: weights only, weights+biases, and the full count
    including BatchNorm affine terms (running statistics are never counted,
    they are not trained).
    """

    def __init__(self, rows: list[tuple[str, int]]):
        self.rows = rows

    @property
    def total(self) -> int:
        return sum(n for _, n in self.rows)

    def _basis(self, include_bias: bool, include_bn: bool) -> int:
        total = 0
        for name, n in self.rows:
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "w":
                total += n
            elif leaf == "b" and include_bias:
                total += n
            elif leaf in ("gamma", "beta") and include_bn:
                total += n
        return total

    @property
    def total_weights(self) -> int:
        return self._basis(include_bias=False, include_bn=False)

    @property
    def total_conv(self) -> int:
        return self._basis(include_bias=True, include_bn=False)

    def as_dict(self) -> dict[str, int]:
        return dict(self.rows)

    def render(self) -> str:
        width = max(len(name) for name, _ in self.rows) if self.rows else 4
        lines = [f"{name:<{width}}  {n:>12}" for name, n in self.rows]
        lines.append("-" * (width + 14))
        lines.append(f"{'total':<{width}}  {self.total:>12}")
        lines.append(f"{'total (conv w+b)':<{width}}  {self.total_conv:>12}")
        lines.append(f"{'total (weights only)':<{width}}  {self.total_weights:>12}")
        return "\n".join(lines)

    def render_kv(self) -> str:
        lines = [f"{name}={n}" for name, n in self.rows]
        lines.append(f"total={self.total}")
        lines.append(f"total_conv={self.total_conv}")
        lines.append(f"total_weights={self.total_weights}")
        return "\n".join(lines)


def count_params(module: Module) -> ParamReport:
    return ParamReport([(name, int(p.data.size))
                        for name, p in module.named_parameters()])
