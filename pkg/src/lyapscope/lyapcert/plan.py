"""Deterministic annulus sampling."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm, qmc

DEFAULT_SEED = 1729


def default_seed() -> int:
    """``LYAPSCOPE_SEED`` if set, else :data:`DEFAULT_SEED`."""
    env = os.environ.get("LYAPSCOPE_SEED")
    return int(env) if env else DEFAULT_SEED


def unit_directions(k: int, n: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """``k`` deterministic unit vectors in R^n (equispaced angles when n=2)."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        th = 2 * np.pi * (np.arange(k) + 0.5) / k
        return np.column_stack([np.cos(th), np.sin(th)])
    u = qmc.Halton(d=n, scramble=True, seed=seed).random(k)
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True)
class SamplePlan:
    """Sample set on the annulus ``r_min <= |x| <= r_max``.

    Either a polar lattice (``radial`` x ``angular``, 2-D only) or ``total``
    scrambled-Halton points with log-uniform radii. Both boundary shells get
    ``shell`` exact points and every half-axis gets ``axis`` probe radii.
    """

    r_min: float = 1e-3
    r_max: float = 10.0
    total: int = 10000
    radial: int | None = None
    angular: int | None = None
    seed: int = DEFAULT_SEED
    dim: int | None = None
    shell: int = 64
    axis: int = 16

    def __post_init__(self):
        if not (0 < self.r_min < self.r_max):
            raise ValueError(f"need 0 < r_min < r_max, got {self.r_min}, {self.r_max}")
        if (self.radial is None) != (self.angular is None):
            raise ValueError("radial and angular counts go together")

    def with_(self, **kw) -> "SamplePlan":
        return replace(self, **kw)

    def _dim(self, n):
        n = self.dim if n is None else n
        if n is None:
            raise ValueError("sample dimension unknown")
        if self.dim is not None and n != self.dim:
            raise ValueError(f"plan is for dimension {self.dim}, asked for {n}")
        return n

    def radii(self, k: int) -> np.ndarray:
        return np.geomspace(self.r_min, self.r_max, k)

    def bulk(self, n: int | None = None) -> np.ndarray:
        n = self._dim(n)
        if self.radial is not None:
            if n != 2:
                raise ValueError("polar lattice plans are 2-D only")
            r = self.radii(self.radial)
            th = 2 * np.pi * (np.arange(self.angular) + 0.5) / self.angular
            R, T = np.meshgrid(r, th, indexing="ij")
            return np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
        u = qmc.Halton(d=n + 1, scramble=True, seed=self.seed).random(self.total)
        r = self.r_min * (self.r_max / self.r_min) ** u[:, 0]
        if n == 1:
            d = np.where(u[:, 1] < 0.5, -1.0, 1.0)[:, None]
        elif n == 2:
            th = 2 * np.pi * u[:, 1]
            d = np.column_stack([np.cos(th), np.sin(th)])
        else:
            g = norm.ppf(np.clip(u[:, 1:], 1e-12, 1 - 1e-12))
            d = g / np.linalg.norm(g, axis=1, keepdims=True)
        return r[:, None] * d

    def shells(self, n: int | None = None) -> np.ndarray:
        n = self._dim(n)
        if self.shell <= 0:
            return np.zeros((0, n))
        d = unit_directions(self.shell, n, self.seed)
        return np.vstack([self.r_min * d, self.r_max * d])

    def axis_points(self, n: int | None = None) -> np.ndarray:
        n = self._dim(n)
        if self.axis <= 0:
            return np.zeros((0, n))
        r = self.radii(self.axis)
        pts = []
        for i in range(n):
            for sgn in (1.0, -1.0):
                p = np.zeros((len(r), n))
                p[:, i] = sgn * r
                pts.append(p)
        return np.vstack(pts)

    def points(self, n: int | None = None) -> np.ndarray:
        """All sample points: bulk, shells, then axis probes."""
        return np.vstack([self.bulk(n), self.shells(n), self.axis_points(n)])

    def axis_values(self) -> np.ndarray:
        """Signed radii (with 0) used for on-axis chord pairs."""
        r = self.radii(self.axis) if self.axis > 0 else np.zeros(0)
        return np.concatenate([-r[::-1], [0.0], r])

    def ray_directions(self, n: int | None = None) -> np.ndarray:
        n = self._dim(n)
        return unit_directions(max(self.shell, 8), n, self.seed)

    def to_dict(self) -> dict:
        return {
            "r_min": self.r_min,
            "r_max": self.r_max,
            "total": self.total,
            "radial": self.radial,
            "angular": self.angular,
            "seed": self.seed,
            "shell": self.shell,
            "axis": self.axis,
        }
