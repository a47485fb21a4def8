import numpy as np

from oave.latent import Latent


class ConstantField:
    """v(z, t) = c everywhere."""

    def __init__(self, c):
        self.c = float(c)

    def __call__(self, z, t, cond=None):
        return np.full_like(np.asarray(z, dtype=float), self.c)


class TimeField:
    """v(z, t) = t, independent of z."""

    def __call__(self, z, t, cond=None):
        return np.full_like(np.asarray(z, dtype=float), t)


def scalar(x: float) -> Latent:
    return Latent(np.array([[[x]]]))
