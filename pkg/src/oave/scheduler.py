"""Flow-matching sampling and inversion numerics.

Convention: t = 1 is pure noise, t = 0 is data, and a denoiser returns the
velocity z1 - z0, so sampling moves with negative dt. The noise schedule is
linear (sigma(t) = t), hence every step uses raw time differences.

A denoiser is any callable ``d(z, t, cond) -> array`` taking and returning a
shaped float64 array. It must not mutate ``z``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Literal

import numpy as np

from .errors import DivergenceDetected, InvalidSteps, NonFiniteVelocity, ShapeMismatch
from .latent import Latent

Denoiser = Callable[[np.ndarray, float, Any], np.ndarray]
SolverKind = Literal["euler", "midpoint"]
SOLVERS = ("euler", "midpoint")

DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class TimeGrid:
    """Times stored descending: ``times[0] == 1.0`` and ``times[-1] == 0.0``."""

    times: tuple[float, ...]

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", ts)
        if len(ts) < 2:
            raise InvalidSteps("a time grid needs at least one step")
        if ts[0] != 1.0 or ts[-1] != 0.0:
            raise InvalidSteps("time grid must run from exactly 1 to exactly 0")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise InvalidSteps("time grid must be strictly decreasing")

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def t(self, i: int) -> float:
        """t_i with t_0 = 0 and t_N = 1."""
        return self.times[self.n_steps - i]


def make_time_grid(n_steps: int) -> TimeGrid:
    if int(n_steps) < 1:
        raise InvalidSteps(f"n_steps must be >= 1, got {n_steps}")
    n = int(n_steps)
    return TimeGrid(tuple(i / n for i in range(n, -1, -1)))


@dataclass(frozen=True)
class InversionMode:
    iterations: int = 3
    combine: Literal["average", "last"] = "average"

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise ValueError("iterations must be >= 1")
        if self.combine not in ("average", "last"):
            raise ValueError(f"combine must be 'average' or 'last', got {self.combine!r}")


def _velocity(d: Denoiser, z: np.ndarray, t: float, cond) -> np.ndarray:
    v = d(z, t, cond)
    v = v.data if isinstance(v, Latent) else np.asarray(v, dtype=np.float64)
    if v.shape != z.shape:
        raise ShapeMismatch(f"denoiser returned shape {v.shape} for input {z.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteVelocity(f"denoiser produced non-finite velocity at t={t}")
    return v


def _check_order(lo: float, hi: float):
    if not lo < hi:
        raise ValueError(f"expected t_prev < t_i, got {lo} and {hi}")


def euler_step(z: Latent, t_i: float, t_prev: float, d: Denoiser, cond=None) -> Latent:
    _check_order(t_prev, t_i)
    return Latent._wrap(z.data + (t_prev - t_i) * _velocity(d, z.data, t_i, cond))


def midpoint_step(z: Latent, t_i: float, t_prev: float, d: Denoiser, cond=None) -> Latent:
    _check_order(t_prev, t_i)
    t_mid = 0.5 * (t_i + t_prev)
    z_mid = z.data + (t_mid - t_i) * _velocity(d, z.data, t_i, cond)
    return Latent._wrap(z.data + (t_prev - t_i) * _velocity(d, z_mid, t_mid, cond))


def naive_invert_step(z_prev: Latent, t_i: float, t_prev: float, d: Denoiser, cond=None) -> Latent:
    # velocity at the old state but the new time
    _check_order(t_prev, t_i)
    return Latent._wrap(z_prev.data + (t_i - t_prev) * _velocity(d, z_prev.data, t_i, cond))


def fixed_point_iterates(
    z_prev: Latent,
    t_i: float,
    t_prev: float,
    d: Denoiser,
    cond=None,
    iterations: int = 3,
    divergence_factor: float = DIVERGENCE_FACTOR,
) -> list[np.ndarray]:
    """Return the iterates z^1..z^K of z^k = z_prev + dt * v(z^{k-1}, t_i).

    The base ``z_prev`` is held fixed; z^0 = z_prev.
    """
    _check_order(t_prev, t_i)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    base = z_prev.data
    dt = t_i - t_prev
    bound = divergence_factor * max(float(np.linalg.norm(base)), 1.0)
    iterates = []
    cur = base
    for k in range(1, iterations + 1):
        cur = base + dt * _velocity(d, cur, t_i, cond)
        if not np.linalg.norm(cur) <= bound:
            raise DivergenceDetected(f"iterate {k} norm exceeded {bound:.3g} at t={t_i}")
        iterates.append(cur)
    return iterates


def fixed_point_invert_step(
    z_prev: Latent,
    t_i: float,
    t_prev: float,
    d: Denoiser,
    cond=None,
    mode: InversionMode = InversionMode(),
    divergence_factor: float = DIVERGENCE_FACTOR,
) -> Latent:
    its = fixed_point_iterates(z_prev, t_i, t_prev, d, cond, mode.iterations, divergence_factor)
    if mode.combine == "last" or len(its) == 1:
        return Latent._wrap(its[-1].copy())
    # mean taken as offsets from the last iterate: exact when all iterates coincide
    last = its[-1]
    return Latent._wrap(last + np.mean(np.stack([x - last for x in its]), axis=0))


@dataclass
class StepLog:
    """Per-step latents of a trajectory, ordered by ascending time index."""

    times: list[float] = field(default_factory=list)
    latents: list[Latent] = field(default_factory=list)

    def append(self, t: float, z: Latent):
        self.times.append(t)
        self.latents.append(z)

    def rows(self):
        for i, (t, z) in enumerate(zip(self.times, self.latents)):
            yield {"step": i, "t": t, "norm": z.norm()}


def invert_trajectory(
    z0: Latent,
    grid: TimeGrid,
    d: Denoiser,
    cond=None,
    mode: InversionMode = InversionMode(),
    divergence_factor: float = DIVERGENCE_FACTOR,
) -> tuple[Latent, StepLog]:
    n = grid.n_steps
    log = StepLog()
    z = z0
    log.append(grid.t(0), z)
    for i in range(1, n):
        z = fixed_point_invert_step(z, grid.t(i), grid.t(i - 1), d, cond, mode, divergence_factor)
        log.append(grid.t(i), z)
    # the last step is plain explicit and evaluates at t_{N-1}, as the editing algorithm writes it
    t_last = grid.t(n - 1)
    z = Latent._wrap(z.data + (grid.t(n) - t_last) * _velocity(d, z.data, t_last, cond))
    log.append(grid.t(n), z)
    return z, log


def sample_trajectory(
    z1: Latent, grid: TimeGrid, d: Denoiser, cond=None, solver: SolverKind = "midpoint"
) -> Latent:
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")
    step = euler_step if solver == "euler" else midpoint_step
    z = z1
    for i in range(grid.n_steps, 0, -1):
        z = step(z, grid.t(i), grid.t(i - 1), d, cond)
    return z


def flow_matching_loss(pred: Latent, z0: Latent, z1: Latent) -> float:
    if not (pred.shape.dims == z0.shape.dims == z1.shape.dims):
        raise ShapeMismatch("pred, z0 and z1 must share a shape")
    err = pred.data - (z1.data - z0.data)
    return float(np.mean(err * err))
