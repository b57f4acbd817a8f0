"""Uniform tensor grids, interpolation onto scattered points and grid stencils."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import ConfigError
from .geometry import MetricField, metric_inverse_and_det


@dataclass(frozen=True)
class UniformGrid:
    """Square 2-D grid ``x0 + i*h`` for ``i = 0..n-1`` along both axes.

    Fields on the grid are indexed ``f[i, j]`` with ``x_1 = axis[i]`` and
    ``x_2 = axis[j]``.
    """

    x0: float
    h: float
    n: int

    @classmethod
    def unit_box(cls, resolution: int, pad: int = 0) -> "UniformGrid":
        """``linspace(-1, 1, resolution)`` extended by ``pad`` nodes on each side."""
        h = 2.0 / (resolution - 1)
        return cls(-1.0 - pad * h, h, resolution + 2 * pad)

    @property
    def axis(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.n)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    def points(self) -> np.ndarray:
        """All nodes as an ``(n*n, 2)`` array in C order."""
        X1, X2 = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([X1.ravel(), X2.ravel()], axis=1)

    def index_of(self, value: float) -> int:
        """Index of the node nearest to ``value``."""
        return int(np.rint((value - self.x0) / self.h))

    def sub_grid(self, lo: int, hi: int) -> "UniformGrid":
        return UniformGrid(self.x0 + lo * self.h, self.h, hi - lo)

    def to_dict(self) -> dict:
        return {"x0": self.x0, "h": self.h, "n": self.n}


def bilinear(grid: UniformGrid, field: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of ``field`` (shape ``(n, n, ...)``) at ``pts``."""
    u = (pts[:, 0] - grid.x0) / grid.h
    w = (pts[:, 1] - grid.x0) / grid.h
    if np.any(u < -1e-9) or np.any(w < -1e-9) or np.any(u > grid.n - 1 + 1e-9) or np.any(w > grid.n - 1 + 1e-9):
        raise ConfigError("interpolation point outside the grid")
    i = np.clip(np.floor(u).astype(int), 0, grid.n - 2)
    j = np.clip(np.floor(w).astype(int), 0, grid.n - 2)
    fu, fw = u - i, w - j
    extra = (slice(None),) + (None,) * (field.ndim - 2)
    fu, fw = fu[extra], fw[extra]
    return ((1 - fu) * (1 - fw) * field[i, j] + fu * (1 - fw) * field[i + 1, j]
            + (1 - fu) * fw * field[i, j + 1] + fu * fw * field[i + 1, j + 1])


def bicubic(grid: UniformGrid, field: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Cubic-spline interpolation of a scalar grid field at ``pts``."""
    return SplineField(grid, field)(pts)


class SplineField:
    """C² cubic-spline interpolant of a scalar grid field."""

    def __init__(self, grid: UniformGrid, field: np.ndarray):
        self.grid = grid
        self._spl = RectBivariateSpline(grid.axis, grid.axis, field, kx=3, ky=3)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return self._spl.ev(pts[:, 0], pts[:, 1])


def central_gradient(field: np.ndarray, h: float) -> np.ndarray:
    """Second-order central gradient, shape ``field.shape + (2,)``.

    Edge rows use one-sided second-order differences.
    """
    g = np.gradient(field, h, edge_order=2)
    return np.stack(g, axis=-1)


def grid_laplace_beltrami(metric: MetricField, grid: UniformGrid, field: np.ndarray) -> np.ndarray:
    """Second-order ``|g|^{-1/2} ∂_j(|g|^{1/2} g^{jk} ∂_k f)`` on the grid.

    The outermost ring of nodes is less accurate (one-sided differences);
    callers trim it when they need interior accuracy.
    """
    pts = grid.points()
    inv, sq = metric_inverse_and_det(metric, pts)
    inv = inv.reshape(grid.n, grid.n, 2, 2)
    sq = sq.reshape(grid.shape)
    grad = central_gradient(field, grid.h)
    flux = sq[..., None] * np.einsum("...jk,...k->...j", inv, grad)
    div = (np.gradient(flux[..., 0], grid.h, axis=0, edge_order=2)
           + np.gradient(flux[..., 1], grid.h, axis=1, edge_order=2))
    return div / sq


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def disk_mask(grid: UniformGrid, radius: float = 1.0) -> np.ndarray:
    X1, X2 = np.meshgrid(grid.axis, grid.axis, indexing="ij")
    return X1**2 + X2**2 <= radius**2 + 1e-12
