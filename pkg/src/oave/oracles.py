"""Closed-form marginal velocity fields and the brute-force checks behind them.

For the linear path z_t = (1 - t) z0 + t z1 with z1 ~ N(0, I), the marginal
velocity is u(z, t) = E[z1 - z0 | z_t = z]. If z0 ~ N(m, s^2 I), then z_t is
Gaussian with mean a*m and variance D = a^2 s^2 + b^2 (a = 1 - t, b = t), and
Cov(z0, z_t) = a s^2, Cov(z1, z_t) = b. Conditioning gives

    E[z0 | z] = m + (a s^2 / D) (z - a m)
    E[z1 | z] = (b / D) (z - a m)

A mixture weights each component's velocity by its posterior responsibility.
``monte_carlo_velocity`` estimates the same quantity from samples without
using any of this structure.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateField,
    InsufficientEffectiveSamples,
    InvalidField,
    SingularTime,
)
from .latent import Latent

FIELD_KINDS = ("point-mass", "gaussian", "mixture")


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Latent) else np.asarray(x, dtype=np.float64)


def _wrap_like(z, out: np.ndarray):
    return Latent._wrap(out) if isinstance(z, Latent) else out


@dataclass(frozen=True)
class Component:
    weight: float
    mean: float | np.ndarray
    spread: float


@dataclass(frozen=True)
class AnalyticField:
    """A data law for z0 whose flow-matching velocity is known in closed form.

    Means may be scalars (broadcast over every element) or arrays matching
    the latent shape. Instances are usable directly as denoisers; the
    condition argument is ignored.
    """

    kind: str
    components: tuple[Component, ...]

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise InvalidField(f"unknown field kind {self.kind!r}")
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise InvalidField("a field needs at least one component")
        if self.kind != "mixture" and len(comps) != 1:
            raise InvalidField(f"{self.kind} field takes exactly one component")
        if self.kind == "point-mass" and comps[0].spread != 0:
            raise InvalidField("point-mass spread must be 0")
        if any(not c.weight > 0 for c in comps):
            raise InvalidField("weights must be positive")
        if abs(sum(c.weight for c in comps) - 1.0) > 1e-12:
            raise InvalidField("weights must sum to 1")
        if any(not c.spread >= 0 for c in comps):
            raise InvalidField("spreads must be >= 0")

    @classmethod
    def point_mass(cls, mean=0.0) -> "AnalyticField":
        return cls("point-mass", (Component(1.0, mean, 0.0),))

    @classmethod
    def gaussian(cls, mean=0.0, spread=1.0) -> "AnalyticField":
        return cls("gaussian", (Component(1.0, mean, float(spread)),))

    @classmethod
    def mixture(cls, components: Sequence[tuple[float, object, float]]) -> "AnalyticField":
        return cls("mixture", tuple(Component(float(w), m, float(s)) for w, m, s in components))

    def velocity(self, z, t: float):
        if self.kind == "point-mass":
            return point_mass_velocity(z, t, self.components[0].mean)
        if self.kind == "gaussian":
            c = self.components[0]
            return gaussian_velocity(z, t, c.mean, c.spread)
        return mixture_velocity(z, t, self)

    def __call__(self, z, t, cond=None):
        return self.velocity(z, t)

    def sample_data(self, shape, rng: np.random.Generator) -> np.ndarray:
        """Draw one z0 of the given shape from the data law."""
        shape = tuple(shape)
        k = rng.choice(len(self.components), p=[c.weight for c in self.components])
        c = self.components[k]
        return np.broadcast_to(_arr(c.mean), shape) + c.spread * rng.standard_normal(shape)

    def to_dict(self) -> dict:
        def mean_out(m):
            m = _arr(m)
            return float(m) if m.ndim == 0 else m.tolist()

        return {
            "kind": self.kind,
            "components": [
                {"weight": c.weight, "mean": mean_out(c.mean), "spread": c.spread}
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "AnalyticField":
        """Accepts the ``to_dict`` form or the shorthands
        ``{"kind": "point-mass", "mean": m}`` and
        ``{"kind": "gaussian", "mean": m, "spread": s}``."""
        kind = spec.get("kind")
        if kind == "zero":
            raise InvalidField("use ZeroField for the zero velocity field")
        if "components" in spec:
            comps = tuple(
                Component(float(c["weight"]), _mean_in(c.get("mean", 0.0)), float(c.get("spread", 0.0)))
                for c in spec["components"]
            )
            return cls(kind, comps)
        if kind == "point-mass":
            return cls.point_mass(_mean_in(spec.get("mean", 0.0)))
        if kind == "gaussian":
            return cls.gaussian(_mean_in(spec.get("mean", 0.0)), float(spec.get("spread", 1.0)))
        raise InvalidField(f"cannot build field from {spec!r}")


def _mean_in(m):
    return float(m) if np.ndim(m) == 0 else np.asarray(m, dtype=np.float64)


class ZeroField:
    """Velocity identically zero; every trajectory is stationary."""

    def __call__(self, z, t, cond=None):
        return np.zeros_like(_arr(z))

    def to_dict(self):
        return {"kind": "zero"}


def point_mass_velocity(z, t: float, mu):
    if t == 0:
        raise SingularTime("point-mass velocity is singular at t = 0")
    if not 0 < t <= 1:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    return _wrap_like(z, (_arr(z) - _arr(mu)) / t)


def gaussian_velocity(z, t: float, m, s: float):
    if not 0 <= t <= 1:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    a, b = 1.0 - t, t
    var0 = s * s
    D = a * a * var0 + b * b
    if D == 0:
        raise SingularTime("gaussian velocity undefined at t = 0 with zero spread")
    z_, m_ = _arr(z), _arr(m)
    centred = z_ - a * m_
    e0 = m_ + (a * var0 / D) * centred
    e1 = (b / D) * centred
    return _wrap_like(z, e1 - e0)


def mixture_log_responsibilities(z, t: float, field: AnalyticField) -> np.ndarray:
    z_ = _arr(z)
    a, b = 1.0 - t, t
    n = z_.size
    logs = []
    for c in field.components:
        D = a * a * c.spread**2 + b * b
        if D == 0:
            raise SingularTime("mixture component singular at t = 0 with zero spread")
        r2 = np.sum((z_ - a * _arr(c.mean)) ** 2)
        logs.append(np.log(c.weight) - 0.5 * r2 / D - 0.5 * n * np.log(2 * np.pi * D))
    logs = np.array(logs)
    top = np.max(logs)
    if not np.isfinite(top):
        raise DegenerateField("all mixture responsibilities underflow")
    return logs - (top + np.log(np.sum(np.exp(logs - top))))


def mixture_velocity(z, t: float, field: AnalyticField):
    if not 0 <= t <= 1:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if len(field.components) == 1:
        c = field.components[0]
        return gaussian_velocity(z, t, c.mean, c.spread)
    resp = np.exp(mixture_log_responsibilities(z, t, field))
    z_ = _arr(z)
    out = np.zeros_like(z_)
    for r, c in zip(resp, field.components):
        if r > 0:
            out += r * gaussian_velocity(z_, t, c.mean, c.spread)
    return _wrap_like(z, out)


def monte_carlo_velocity(
    z,
    t: float,
    field: AnalyticField,
    n_samples: int = 10**6,
    bandwidth: float = 0.05,
    seed: int = 0,
    estimator: str = "local-linear",
    min_ess: float = 100.0,
) -> tuple[np.ndarray | Latent, float]:
    """Kernel-regression estimate of E[z1 - z0 | z_t = z] from simulated pairs.

    Pairs are drawn from the field's generative law, pushed through the linear
    path, and regressed onto the query with Gaussian kernel weights. The
    default local-linear fit has O(bandwidth^2) bias proportional to the
    curvature of the velocity in z (zero for affine fields); the plain
    Nadaraya-Watson average additionally picks up a density-gradient term.

    Returns the estimate and its standard error (largest over elements).
    """
    if n_samples < 10**4:
        raise ValueError(f"n_samples must be >= 1e4, got {n_samples}")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if estimator not in ("local-linear", "nadaraya-watson"):
        raise ValueError(f"unknown estimator {estimator!r}")
    q = _arr(z).reshape(-1)
    dim = q.size
    rng = np.random.Generator(np.random.PCG64(seed))

    comp = rng.choice(len(field.components), size=n_samples, p=[c.weight for c in field.components])
    z0 = np.empty((n_samples, dim))
    for k, c in enumerate(field.components):
        idx = np.flatnonzero(comp == k)
        mean = np.broadcast_to(_arr(c.mean), _arr(z).shape).reshape(-1)
        z0[idx] = mean + c.spread * rng.standard_normal((idx.size, dim))
    z1 = rng.standard_normal((n_samples, dim))
    zt = (1.0 - t) * z0 + t * z1
    y = z1 - z0

    diff = zt - q
    logw = -0.5 * np.sum(diff * diff, axis=1) / bandwidth**2
    keep = logw > -50.0
    diff, y, w = diff[keep], y[keep], np.exp(logw[keep])
    ess = w.sum() ** 2 / np.sum(w * w) if w.size else 0.0
    if ess < min_ess:
        raise InsufficientEffectiveSamples(f"effective sample size {ess:.1f} < {min_ess}")

    if estimator == "nadaraya-watson":
        lw = w / w.sum()
        est = lw @ y
        resid = y - est
    else:
        X = np.hstack([np.ones((w.size, 1)), diff])
        XtW = X.T * w
        G = XtW @ X
        beta = np.linalg.solve(G, XtW @ y)
        lw = np.linalg.solve(G, XtW)[0]  # equivalent weights of the intercept
        est = beta[0]
        resid = y - X @ beta
    se = np.sqrt(np.sum((lw[:, None] ** 2) * resid**2, axis=0))
    est = est.reshape(_arr(z).shape)
    return _wrap_like(z, est), float(np.max(se))


def reference_integrate(z_start, t_start: float, t_end: float, field, n_substeps: int = 10**5):
    """Classical RK4 over a uniform grid; ground truth for solver-order checks."""
    if n_substeps < 10**4:
        raise ValueError(f"n_substeps must be >= 1e4, got {n_substeps}")
    y = _arr(z_start).copy()
    span = t_end - t_start
    h = span / n_substeps
    for i in range(n_substeps):
        t = t_start + span * i / n_substeps
        t_next = t_start + span * (i + 1) / n_substeps
        t_half = 0.5 * (t + t_next)
        k1 = _arr(field(y, t, None))
        k2 = _arr(field(y + 0.5 * h * k1, t_half, None))
        k3 = _arr(field(y + 0.5 * h * k2, t_half, None))
        k4 = _arr(field(y + h * k3, t_next, None))
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return _wrap_like(z_start, y)
