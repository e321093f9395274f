"""Small dense-array toolkit: grids, token sequences, seeded parameters.

Coordinates handed to :func:`bilinear_sample` are normalized ``(x, y)`` with
align-corners semantics: node ``i`` of an ``n``-long axis sits at ``i / (n - 1)``.
"""
from __future__ import annotations

import io
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from gvground import kernels
from gvground.errors import ConfigurationError, InvalidArgument

_MAGIC = "GVPARAMS 1"


@dataclass(frozen=True)
class Grid:
    """An ``h x w x C`` feature map stored row-major."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] == 0 or v.shape[1] == 0 or v.shape[2] == 0:
            raise InvalidArgument(f"grid must be non-empty h x w x C, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("grid contains non-finite values")
        v = v.copy() if v is self.values else v
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_flat(cls, height: int, width: int, channels: int, values) -> "Grid":
        flat = np.asarray(values, dtype=np.float64).ravel()
        if flat.size != height * width * channels:
            raise InvalidArgument(
                f"expected {height * width * channels} values, got {flat.size}")
        return cls(flat.reshape(height, width, channels))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def tokens(self) -> np.ndarray:
        """The grid as an ``(h*w, C)`` token matrix, row-major."""
        return self.values.reshape(-1, self.channels)


@dataclass(frozen=True)
class TextSequence:
    """Token embeddings with a validity mask (False marks padding)."""

    features: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        f = np.array(self.features, dtype=np.float64)
        m = np.array(self.mask, dtype=bool)
        if f.ndim != 2 or m.shape != (f.shape[0],):
            raise InvalidArgument(
                f"features {f.shape} and mask {m.shape} are inconsistent")
        f.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "mask", m)

    def __len__(self) -> int:
        return self.features.shape[0]


def softmax(logits, axis: int = -1) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgument("softmax of an empty input")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("softmax input contains non-finite values")
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_sigmoid(x):
    """``log(sigmoid(x))`` without cancellation."""
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def inverse_sigmoid(p, eps: float = 1e-5):
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


def top_k(scores, k: int) -> list[int]:
    """Indices of the ``k`` largest scores, descending; ties by ascending index."""
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    s = np.asarray(scores, dtype=np.float64).ravel()
    order = np.argsort(-s, kind="stable")
    return [int(i) for i in order[:k]]


def l2_norm_scores(seq: TextSequence) -> np.ndarray:
    return np.linalg.norm(seq.features, axis=1) * seq.mask


def bilinear_sample(grid, point) -> np.ndarray:
    """Sample ``grid`` at normalized ``point = (x, y)``; out-of-range points clamp."""
    values = grid.values if isinstance(grid, Grid) else np.asarray(grid, dtype=np.float64)
    if values.ndim != 3 or values.shape[0] == 0 or values.shape[1] == 0:
        raise InvalidArgument(f"degenerate grid of shape {values.shape}")
    h, w = values.shape[:2]
    x, y = float(point[0]), float(point[1])
    return kernels.sample_bilinear(values, x * (w - 1), y * (h - 1))


def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


class ParamStore:
    """Named float64 tensors, seed-initialized one deterministic stream per name.

    Tensors are frozen once added. Use :meth:`updated` to derive a store with
    some tensors replaced.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._tensors: dict[str, np.ndarray] = {}

    def add(self, name: str, shape, *, init: str = "uniform", fan_in: int | None = None,
            scale: float = 1.0) -> np.ndarray:
        """Register a tensor.

        ``init`` is one of ``uniform`` (bound ``scale / sqrt(fan_in)``), ``zeros``
        or ``identity``. ``fan_in`` defaults to the last axis of ``shape``.
        """
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if init == "uniform":
            fan = fan_in if fan_in is not None else shape[-1]
            bound = scale / np.sqrt(fan)
            value = _stream(self.seed, name).uniform(-bound, bound, size=shape)
        elif init == "zeros":
            value = np.zeros(shape)
        elif init == "identity":
            if len(shape) != 2:
                raise ConfigurationError(f"identity init needs a matrix, got {shape}")
            value = np.eye(shape[0], shape[1])
        else:
            raise ConfigurationError(f"unknown init {init!r}")
        return self.set(name, value)

    def set(self, name: str, value) -> np.ndarray:
        if name in self._tensors:
            raise ConfigurationError(f"parameter {name!r} registered twice")
        arr = np.array(value, dtype=np.float64)
        arr.setflags(write=False)
        self._tensors[name] = arr
        return arr

    def add_linear(self, name: str, n_in: int, n_out: int, *, bias: bool = True,
                   init: str = "uniform") -> None:
        self.add(f"{name}.weight", (n_out, n_in), init=init, fan_in=n_in)
        if bias:
            self.add(f"{name}.bias", (n_out,), init="uniform" if init == "uniform" else "zeros",
                     fan_in=n_in)

    def add_mlp(self, name: str, dims, *, init: str = "uniform") -> None:
        """Register an MLP ``dims[0] -> ... -> dims[-1]`` as layers ``name.0``, ``name.1``..."""
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.add_linear(f"{name}.{i}", a, b, init=init)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise ConfigurationError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._tensors if n.startswith(prefix)]

    def shape(self, name: str) -> tuple[int, ...]:
        return self[name].shape

    def updated(self, values: Mapping[str, np.ndarray]) -> "ParamStore":
        """A new store sharing every tensor except those in ``values``."""
        new = ParamStore(self.seed)
        new._tensors = dict(self._tensors)
        for name, value in values.items():
            old = self[name]
            arr = np.array(value, dtype=np.float64)
            if arr.shape != old.shape:
                raise ConfigurationError(
                    f"{name}: shape {arr.shape} does not match registered {old.shape}")
            arr.setflags(write=False)
            new._tensors[name] = arr
        return new

    def equals(self, other: "ParamStore") -> bool:
        if self.seed != other.seed or list(self) != list(other):
            return False
        return all(np.array_equal(self[n], other[n]) for n in self)

    # persistence: text header, then little-endian float64 payloads in order
    def to_bytes(self) -> bytes:
        lines = [_MAGIC, f"seed {self.seed}", f"count {len(self._tensors)}"]
        for name, arr in self._tensors.items():
            dims = ",".join(str(d) for d in arr.shape)
            lines.append(f"{name} {dims}")
        lines.append("END")
        buf = io.BytesIO()
        buf.write(("\n".join(lines) + "\n").encode("ascii"))
        for arr in self._tensors.values():
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamStore":
        end = data.find(b"\nEND\n")
        if end < 0:
            raise ConfigurationError("parameter file has no END marker")
        header = data[:end].decode("ascii").split("\n")
        if header[0] != _MAGIC:
            raise ConfigurationError(f"bad parameter file magic {header[0]!r}")
        seed = int(header[1].split()[1])
        count = int(header[2].split()[1])
        entries = header[3:]
        if len(entries) != count:
            raise ConfigurationError(f"header lists {len(entries)} tensors, expected {count}")
        store = cls(seed)
        offset = end + len(b"\nEND\n")
        for line in entries:
            name, dims = line.rsplit(" ", 1)
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape)
            offset += 8 * n
            store.set(name, arr.astype(np.float64))
        if offset != len(data):
            raise ConfigurationError("trailing bytes after parameter payload")
        return store

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_bytes(Path(path).read_bytes())


def rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w.T`` with every output row reduced independently of the others."""
    return (x[..., None, :] * w).sum(axis=-1)


def linear(params: ParamStore, name: str, x) -> np.ndarray:
    """Affine map ``x @ W.T + b`` for a vector or a batch of row vectors.

    A row's result never depends on which other rows share the batch.
    """
    w = params[f"{name}.weight"]
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[1]:
        raise ConfigurationError(
            f"{name}: input width {x.shape[-1]} does not match weight {w.shape}")
    y = rowwise_matmul(x, w)
    bias = f"{name}.bias"
    if bias in params:
        y = y + params[bias]
    return y


def mlp_layers(params: ParamStore, name: str) -> int:
    n = 0
    while f"{name}.{n}.weight" in params:
        n += 1
    return n


def mlp_forward(params: ParamStore, name: str, x) -> np.ndarray:
    """Affine layers with ReLU between them (none after the last)."""
    n = mlp_layers(params, name)
    if n == 0:
        raise ConfigurationError(f"no MLP registered under {name!r}")
    y = np.asarray(x, dtype=np.float64)
    for i in range(n):
        y = linear(params, f"{name}.{i}", y)
        if i < n - 1:
            y = np.maximum(y, 0.0)
    return y


def relu(x):
    return np.maximum(x, 0.0)

