"""Gaussian influence medium: cells, the influence matrix, local density.

Each cell j secretes influence that decays as exp(-dist^2 / sigma_j^2).
Entry m_ij of the influence matrix is what cell i receives from cell j,
so column j is governed by the secretor's radius sigma_j.  A cell's
local density d_i is the sum of its row, diagonal excluded.  Entries
below the sparsity threshold epsilon are stored as exact zeros; the
matrix is kept as a dense array with thresholded zeros, which at desk
scale (n <= a few thousand) is simpler and faster than a sparse format
while preserving the same contracts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import RadiusUnderflowError

# Radii may never drop below this; Gaussian influence with sigma=0 is
# undefined, so cells start here ("zero" initial influence) and grow.
SIGMA_FLOOR = 1e-6


class CellSet:
    """A population of cells: geometry, influence radii, recognition flags.

    Geometry is either an (n, dim) coordinate array or a precomputed
    symmetric (n, n) distance matrix; the two modes are mutually
    exclusive and behave identically given equal pairwise distances.
    """

    def __init__(self, coords=None, distances=None, sigma=None, recognized=None):
        if (coords is None) == (distances is None):
            raise ValueError("provide exactly one of coords or distances")
        if coords is not None:
            coords = np.atleast_2d(np.asarray(coords, dtype=float))
            self.coords = coords
            self._dist = None
            n = coords.shape[0]
        else:
            distances = np.asarray(distances, dtype=float)
            if distances.ndim != 2 or distances.shape[0] != distances.shape[1]:
                raise ValueError("distance matrix must be square")
            if not np.allclose(distances, distances.T, atol=1e-9):
                raise ValueError("distance matrix must be symmetric")
            if np.any(distances < 0):
                raise ValueError("distances must be nonnegative")
            if np.any(np.abs(np.diag(distances)) > 1e-12):
                raise ValueError("distance matrix diagonal must be zero")
            self.coords = None
            self._dist = distances
            n = distances.shape[0]
        self.n = n
        if sigma is None:
            sigma = np.full(n, SIGMA_FLOOR)
        self.sigma = np.asarray(sigma, dtype=float).copy()
        if self.sigma.shape != (n,):
            raise ValueError("sigma must have one entry per cell")
        if np.any(self.sigma < SIGMA_FLOOR):
            raise RadiusUnderflowError("sigma below floor at construction")
        if recognized is None:
            recognized = np.zeros(n, dtype=bool)
        self.recognized = np.asarray(recognized, dtype=bool).copy()
        if self.recognized.shape != (n,):
            raise ValueError("recognized must have one entry per cell")

    @property
    def is_coordinate_mode(self):
        return self.coords is not None

    def pairwise_distances(self):
        """The full distance matrix (cached until geometry changes)."""
        if self._dist is None:
            self._dist = cdist(self.coords, self.coords)
        return self._dist

    def invalidate_geometry(self):
        """Drop the cached distances after coordinates were mutated."""
        if self.coords is not None:
            self._dist = None

    def query_distances(self, point):
        """Distances from an external point to every cell (coordinate mode)."""
        if self.coords is None:
            raise ValueError("query distances require coordinate mode")
        point = np.asarray(point, dtype=float)
        return np.linalg.norm(self.coords - point[None, :], axis=1)

    def copy(self):
        c = CellSet.__new__(CellSet)
        c.coords = None if self.coords is None else self.coords.copy()
        c._dist = None if self._dist is None else self._dist.copy()
        c.n = self.n
        c.sigma = self.sigma.copy()
        c.recognized = self.recognized.copy()
        return c


@dataclass
class InfluenceMatrix:
    """Thresholded Gaussian influence matrix with its density vector.

    entries[i, j] = influence of cell j on cell i (0 on the diagonal and
    wherever the raw kernel value fell below epsilon); density[i] is the
    row sum excluding the diagonal.
    """

    entries: np.ndarray
    epsilon: float
    density: np.ndarray = field(init=False)

    def __post_init__(self):
        self.density = self.entries.sum(axis=1)

    @property
    def n(self):
        return self.entries.shape[0]

    def symmetrized(self):
        """M + M^T, the interaction operator used by colony dynamics."""
        return self.entries + self.entries.T


def influence(dist, sigma_j, epsilon=0.0):
    """Scalar Gaussian influence exp(-dist^2/sigma_j^2), thresholded at epsilon."""
    if sigma_j < SIGMA_FLOOR:
        raise RadiusUnderflowError(f"sigma {sigma_j} below floor {SIGMA_FLOOR}")
    value = math.exp(-(dist * dist) / (sigma_j * sigma_j))
    return value if value >= epsilon else 0.0


def raw_kernel(cells: CellSet):
    """Unthresholded kernel matrix with zero diagonal."""
    dist = cells.pairwise_distances()
    sigma = cells.sigma
    with np.errstate(under="ignore"):
        k = np.exp(-(dist * dist) / (sigma * sigma)[None, :])
    np.fill_diagonal(k, 0.0)
    return k


def build_influence_matrix(cells: CellSet, epsilon: float) -> InfluenceMatrix:
    """Assemble the thresholded influence matrix and its density vector."""
    if np.any(cells.sigma < SIGMA_FLOOR):
        raise RadiusUnderflowError("sigma below floor; clamp before building")
    k = raw_kernel(cells)
    k[k < epsilon] = 0.0
    return InfluenceMatrix(entries=k, epsilon=epsilon)


def density_of_query(query_distances, cells: CellSet) -> float:
    """Density felt at an external point: sum of all cells' influence, no cutoff."""
    q = np.asarray(query_distances, dtype=float)
    if q.shape != (cells.n,):
        raise ValueError(f"expected {cells.n} query distances, got {q.shape}")
    if cells.n == 0:
        return 0.0
    with np.errstate(under="ignore"):
        vals = np.exp(-(q * q) / (cells.sigma * cells.sigma))
    return float(vals.sum())
