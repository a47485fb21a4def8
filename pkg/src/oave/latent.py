"""Latent grids, seeded noise and the invertible stand-in codec.

Values are stored as float64 numpy arrays in C (row-major) order, which is
the same layout the grid file format uses. Arrays held by a ``Latent`` are
marked read-only so latents can be shared freely.

Noise comes from numpy's ``PCG64`` bit generator fed to
``Generator.standard_normal`` (ziggurat). That stream is stable across numpy
releases >= 1.17 for a given seed; see README for the pinned details.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidShape, NonFiniteValue, ShapeMismatch

MAX_ELEMENTS = 2**24
NOISE_GENERATOR = "numpy.random.PCG64 + Generator.standard_normal"


@dataclass(frozen=True)
class Shape:
    dims: tuple[int, ...]
    max_elements: int = field(default=MAX_ELEMENTS, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) not in (3, 4):
            raise InvalidShape(f"rank must be 3 or 4, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise InvalidShape(f"all extents must be >= 1, got {dims}")
        if prod(dims) > self.max_elements:
            raise InvalidShape(f"{prod(dims)} elements exceeds cap {self.max_elements}")

    @property
    def size(self) -> int:
        return prod(self.dims)

    @property
    def channels(self) -> int:
        return self.dims[0]

    def __iter__(self):
        return iter(self.dims)

    def __len__(self):
        return len(self.dims)


def as_shape(shape: Shape | Iterable[int]) -> Shape:
    return shape if isinstance(shape, Shape) else Shape(tuple(shape))


class Latent:
    """An immutable real-valued grid of rank 3 (audio-like) or 4 (video-like)."""

    __slots__ = ("_data", "_shape")

    def __init__(self, data, shape: Shape | Sequence[int] | None = None):
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if shape is not None:
            shape = as_shape(shape)
            if arr.size != shape.size:
                raise ShapeMismatch(f"{arr.size} values for shape {shape.dims}")
            arr = arr.reshape(shape.dims)
        else:
            shape = Shape(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("latent values must be finite")
        arr.setflags(write=False)
        self._data = arr
        self._shape = shape

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Latent":
        # internal fast path: arr is already a fresh float64 array we own
        obj = cls.__new__(cls)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("latent values must be finite")
        arr.setflags(write=False)
        obj._data = arr
        obj._shape = Shape(arr.shape)
        return obj

    @property
    def shape(self) -> Shape:
        return self._shape

    @property
    def data(self) -> np.ndarray:
        """Read-only view shaped like ``shape.dims``."""
        return self._data

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view."""
        return self._data.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def bitwise_equal(self, other: "Latent") -> bool:
        return self.shape.dims == other.shape.dims and self._data.tobytes() == other._data.tobytes()

    def __repr__(self):
        return f"Latent(shape={self.shape.dims}, norm={self.norm():.6g})"


def alloc_latent(shape, fill: float) -> Latent:
    shape = as_shape(shape)
    return Latent._wrap(np.full(shape.dims, float(fill), dtype=np.float64))


def gaussian_noise(shape, seed: int) -> Latent:
    shape = as_shape(shape)
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    return Latent._wrap(rng.standard_normal(shape.dims, dtype=np.float64))


@dataclass(frozen=True)
class Codec:
    kind: str = "identity"
    scales: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("identity", "diagonal-scale"):
            raise ValueError(f"unknown codec kind {self.kind!r}")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if self.kind == "diagonal-scale":
            if not self.scales:
                raise ValueError("diagonal-scale codec needs per-channel scales")
            if any(not (s > 0 and np.isfinite(s)) for s in self.scales):
                raise ValueError("codec scales must be strictly positive")

    def _channel_scales(self, x: Latent) -> np.ndarray:
        if x.shape.channels != len(self.scales):
            raise ShapeMismatch(
                f"codec has {len(self.scales)} channels, latent has {x.shape.channels}"
            )
        return np.asarray(self.scales).reshape((-1,) + (1,) * (len(x.shape) - 1))


def codec_encode(x: Latent, codec: Codec) -> Latent:
    if codec.kind == "identity":
        return x
    return Latent._wrap(x.data / codec._channel_scales(x))


def codec_decode(z: Latent, codec: Codec) -> Latent:
    if codec.kind == "identity":
        return z
    return Latent._wrap(z.data * codec._channel_scales(z))
