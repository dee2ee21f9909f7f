# This file is part of sim_offload.
#
# Developed for the LSST Data Management System.
# This product includes software developed by the LSST Project
# (https://www.lsst.org).
# See the COPYRIGHT file at the top-level directory of this distribution
# for details of code ownership.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

__all__ = ["MAX_GRID_LEVEL", "GridLevel", "StateVector", "Restriction", "makeGrid", "restrict",
           "makeInitialState", "eigenmodeState"]

import numpy as np

from .exceptions import ConfigurationError, DimensionError

MAX_GRID_LEVEL = 12


class GridLevel:
    """A uniform grid on the unit square with ``2**level + 1`` points per
    axis.

    Points are linearized row-major: point ``(j, k)`` (``y = j*dx``,
    ``x = k*dx``) has index ``j*side + k``.  The points of a level are a
    subset of the points of every finer level.

    Parameters
    ----------
    level : `int`
        Refinement level, ``0 <= level <= MAX_GRID_LEVEL``.
    """

    def __init__(self, level):
        if int(level) != level or not 0 <= level <= MAX_GRID_LEVEL:
            raise ConfigurationError("Grid level must be an integer in [0, %d]; got %r" %
                                     (MAX_GRID_LEVEL, level))
        self._level = int(level)
        self._side = 2**self._level + 1
        self._boundaryMask = None

    @property
    def level(self):
        return self._level

    @property
    def side(self):
        """Number of points per axis (`int`)."""
        return self._side

    @property
    def nPoints(self):
        """Total number of points, boundary included (`int`)."""
        return self._side*self._side

    @property
    def dx(self):
        """Mesh width (`float`)."""
        return 1.0/2**self._level

    @property
    def boundaryMask(self):
        """Read-only boolean array, `True` for Dirichlet boundary points."""
        if self._boundaryMask is None:
            mask = np.zeros((self._side, self._side), dtype=bool)
            mask[0, :] = mask[-1, :] = True
            mask[:, 0] = mask[:, -1] = True
            mask = mask.ravel()
            mask.setflags(write=False)
            self._boundaryMask = mask
        return self._boundaryMask

    @property
    def interiorIndices(self):
        """Indices of the interior points, increasing (`numpy.ndarray`)."""
        return np.flatnonzero(~self.boundaryMask)

    def coordinates(self):
        """Return the coordinates of all points.

        Returns
        -------
        x, y : `numpy.ndarray`
            Coordinates of each point, in index order.
        """
        axis = np.arange(self._side)*self.dx
        y, x = np.meshgrid(axis, axis, indexing="ij")
        return x.ravel(), y.ravel()

    def __eq__(self, other):
        if not isinstance(other, GridLevel):
            return NotImplemented
        return self._level == other._level

    def __hash__(self):
        return hash(self._level)

    def __repr__(self):
        return "GridLevel(%d)" % self._level


def makeGrid(level):
    """Make the grid for a refinement level.

    Parameters
    ----------
    level : `int`
        Refinement level.

    Returns
    -------
    grid : `GridLevel`
        The grid.

    Raises
    ------
    ConfigurationError
        Raised if ``level`` is outside ``[0, MAX_GRID_LEVEL]``.
    """
    return GridLevel(level)


class StateVector:
    """Values of a simulation state on one grid.

    Parameters
    ----------
    grid : `GridLevel`
        Grid the values live on.
    values : array-like
        Values in row-major point order, length ``grid.nPoints``.
    copy : `bool`, optional
        Copy ``values``; pass `False` only for arrays nobody else holds.

    Notes
    -----
    The stored array is read-only so states can be shared freely between
    threads and between the server and client pipelines.
    """

    def __init__(self, grid, values, copy=True):
        values = np.array(values, dtype=np.float64, copy=True) if copy else \
            np.asarray(values, dtype=np.float64)
        if values.shape != (grid.nPoints,):
            raise DimensionError("State on %r needs %d values; got shape %s" %
                                 (grid, grid.nPoints, values.shape))
        values.setflags(write=False)
        self._grid = grid
        self._values = values

    @property
    def grid(self):
        return self._grid

    @property
    def values(self):
        """Read-only values (`numpy.ndarray`)."""
        return self._values

    def asImage(self):
        """Return a read-only ``(side, side)`` view, rows along y."""
        return self._values.reshape(self._grid.side, self._grid.side)

    def isFinite(self):
        return bool(np.all(np.isfinite(self._values)))

    def isIdentical(self, other):
        """Return `True` if ``other`` is on the same grid with bit-identical
        values.
        """
        return (self._grid == other.grid
                and self._values.tobytes() == other.values.tobytes())

    def __sub__(self, other):
        if self._grid != other.grid:
            raise DimensionError("Cannot subtract state on %r from state on %r" % (other.grid, self._grid))
        return StateVector(self._grid, self._values - other.values, copy=False)

    def __repr__(self):
        return "StateVector(%r)" % (self._grid,)


class Restriction:
    """Injection of a fine-grid state onto a coarser nested grid.

    Each coarse point takes the value of the fine point at the same
    coordinates, so restriction is exact and linear.

    Parameters
    ----------
    fromGrid : `GridLevel`
        Fine grid.
    toGrid : `GridLevel`
        Coarse grid; must not be finer than ``fromGrid``.
    """

    def __init__(self, fromGrid, toGrid):
        if toGrid.level > fromGrid.level:
            raise DimensionError("Cannot restrict from %r to finer %r" % (fromGrid, toGrid))
        self.fromGrid = fromGrid
        self.toGrid = toGrid
        stride = 2**(fromGrid.level - toGrid.level)
        fineAxis = np.arange(0, fromGrid.side, stride)
        indexMap = (fineAxis[:, np.newaxis]*fromGrid.side + fineAxis[np.newaxis, :]).ravel()
        indexMap.setflags(write=False)
        self.indexMap = indexMap

    def apply(self, state):
        """Restrict ``state``, which must be on ``fromGrid``.

        Parameters
        ----------
        state : `StateVector`
            Fine-grid state.

        Returns
        -------
        restricted : `StateVector`
            State on ``toGrid``; ``state`` itself when both grids agree.
        """
        if state.grid != self.fromGrid:
            raise DimensionError("Restriction expects a state on %r; got %r" % (self.fromGrid, state.grid))
        if self.toGrid == self.fromGrid:
            return state
        return StateVector(self.toGrid, state.values[self.indexMap], copy=False)

    def __call__(self, state):
        return self.apply(state)


def restrict(state, to):
    """Restrict a state to a coarser nested grid by injection.

    Parameters
    ----------
    state : `StateVector`
        State to restrict.
    to : `GridLevel`
        Target grid.

    Returns
    -------
    restricted : `StateVector`
        Restricted state.

    Raises
    ------
    DimensionError
        Raised if ``to`` is finer than the grid of ``state``.
    """
    return Restriction(state.grid, to).apply(state)


def makeInitialState(grid, seed):
    """Make a random initial state: uniform values in ``[0, 1)`` in the
    interior, zero on the boundary.

    Parameters
    ----------
    grid : `GridLevel`
        Grid of the state, normally the reference grid.
    seed : `int`
        Seed of the Mersenne Twister stream.

    Returns
    -------
    state : `StateVector`
        The initial state.
    """
    rng = np.random.Generator(np.random.MT19937(seed))
    values = rng.random(grid.nPoints)
    values[grid.boundaryMask] = 0.0
    return StateVector(grid, values, copy=False)


def eigenmodeState(grid, amplitude=1.0):
    """Sample ``amplitude*sin(pi*x)*sin(pi*y)``, the slowest decaying mode
    of the heat equation on the unit square.
    """
    x, y = grid.coordinates()
    values = amplitude*np.sin(np.pi*x)*np.sin(np.pi*y)
    values[grid.boundaryMask] = 0.0
    return StateVector(grid, values, copy=False)
