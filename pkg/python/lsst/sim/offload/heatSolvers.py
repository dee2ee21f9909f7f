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

__all__ = ["HeatProblemConfig", "HeatProblem", "ModelKind", "FTCS_STABILITY_LIMIT", "checkFtcsStability",
           "ftcsStep", "adiStep", "modelStep", "runChain", "denseStepMatrix"]

import enum

import numpy as np
import scipy.linalg

import lsst.pex.config as pexConfig

from .exceptions import ConfigurationError
from .grid import MAX_GRID_LEVEL, StateVector

FTCS_STABILITY_LIMIT = 0.25


class HeatProblemConfig(pexConfig.Config):
    """Parameters of the 2D heat problem solved by both models.
    """
    alpha = pexConfig.RangeField(
        doc="Thermal diffusivity.  At 0.01 the random initial state stays rough on the surrogate grid "
            "for the whole run, so the surrogate drifts from the reference at a steady rate.",
        dtype=float,
        default=0.01,
        min=0.0,
        inclusiveMin=False,
    )
    dt = pexConfig.RangeField(
        doc="Time step between published states.",
        dtype=float,
        default=1e-4,
        min=0.0,
        inclusiveMin=False,
    )
    nSteps = pexConfig.RangeField(
        doc="Number of time steps after the initial state.",
        dtype=int,
        default=100,
        min=0,
    )
    nRef = pexConfig.RangeField(
        doc="Reference sub-steps per published step; the reference model advances by dt/nRef.",
        dtype=int,
        default=1,
        min=1,
    )
    surrogateLevel = pexConfig.RangeField(
        doc="Grid level of the surrogate (explicit) model.",
        dtype=int,
        default=5,
        min=0,
        max=MAX_GRID_LEVEL,
    )
    referenceLevel = pexConfig.RangeField(
        doc="Grid level of the reference (ADI) model.",
        dtype=int,
        default=6,
        min=0,
        max=MAX_GRID_LEVEL,
    )

    def validate(self):
        pexConfig.Config.validate(self)
        if self.referenceLevel < self.surrogateLevel:
            raise ValueError("referenceLevel (%d) must not be coarser than surrogateLevel (%d)" %
                             (self.referenceLevel, self.surrogateLevel))

    def makeProblem(self):
        """Return the `HeatProblem` described by this config."""
        return HeatProblem(alpha=self.alpha, dt=self.dt, nSteps=self.nSteps, nRef=self.nRef)


class HeatProblem:
    """Time discretization of the heat equation.

    Parameters
    ----------
    alpha : `float`
        Thermal diffusivity, positive.
    dt : `float`
        Time step, positive.
    nSteps : `int`, optional
        Number of steps of a chain.
    nRef : `int`, optional
        Reference sub-steps per step.
    """

    def __init__(self, alpha, dt, nSteps=1, nRef=1):
        if not alpha > 0 or not dt > 0:
            raise ConfigurationError("alpha and dt must be positive; got alpha=%r, dt=%r" % (alpha, dt))
        if nSteps < 0 or nRef < 1:
            raise ConfigurationError("Need nSteps >= 0 and nRef >= 1; got %r, %r" % (nSteps, nRef))
        self.alpha = float(alpha)
        self.dt = float(dt)
        self.nSteps = int(nSteps)
        self.nRef = int(nRef)

    def meshRatio(self, grid):
        """Return ``alpha*dt/dx**2`` on ``grid``."""
        return self.alpha*self.dt/grid.dx**2

    def subProblem(self):
        """Return the problem advanced by one reference sub-step."""
        return HeatProblem(self.alpha, self.dt/self.nRef, self.nSteps*self.nRef, 1)

    def __repr__(self):
        return "HeatProblem(alpha=%r, dt=%r, nSteps=%r, nRef=%r)" % (self.alpha, self.dt, self.nSteps,
                                                                      self.nRef)


class ModelKind(enum.Enum):
    """Time stepping scheme of a simulation model."""
    FTCS_EXPLICIT = "ftcs"
    ADI_CRANK_NICOLSON = "adi"


def checkFtcsStability(grid, prob):
    """Return the mesh ratio of the explicit model, raising
    `ConfigurationError` if it exceeds the stability limit.
    """
    r = prob.meshRatio(grid)
    if r > FTCS_STABILITY_LIMIT:
        raise ConfigurationError("Explicit step unstable on %r: alpha*dt/dx**2 = %g > %g" %
                                 (grid, r, FTCS_STABILITY_LIMIT))
    return r


def ftcsStep(state, prob):
    """Advance a state by one explicit forward-time central-space step.

    Parameters
    ----------
    state : `lsst.sim.offload.StateVector`
        State whose boundary holds the Dirichlet values.
    prob : `HeatProblem`
        Problem supplying ``alpha`` and ``dt``.

    Returns
    -------
    result : `lsst.sim.offload.StateVector`
        Advanced state; boundary values unchanged.

    Raises
    ------
    ConfigurationError
        Raised if ``alpha*dt/dx**2 > 0.25``.
    """
    grid = state.grid
    r = checkFtcsStability(grid, prob)
    image = state.asImage()
    out = np.array(image)
    center = image[1:-1, 1:-1]
    out[1:-1, 1:-1] = center + r*(image[2:, 1:-1] + image[:-2, 1:-1] + image[1:-1, 2:] + image[1:-1, :-2]
                                  - 4.0*center)
    return StateVector(grid, out.ravel(), copy=False)


def _tridiagonalBands(n, halfR):
    """Banded storage of the Crank-Nicolson matrix ``tridiag(-r/2, 1+r, -r/2)``."""
    bands = np.empty((3, n))
    bands[0, :] = -halfR
    bands[1, :] = 1.0 + 2.0*halfR
    bands[2, :] = -halfR
    return bands


def adiStep(state, prob):
    """Advance a state by one Peaceman-Rachford ADI step.

    The first half step is implicit along x and explicit along y, the
    second implicit along y and explicit along x.  Each implicit sweep is a
    set of tridiagonal Crank-Nicolson systems, one per grid line, solved
    together with `scipy.linalg.solve_banded`.

    Parameters
    ----------
    state : `lsst.sim.offload.StateVector`
        State whose boundary holds the Dirichlet values.
    prob : `HeatProblem`
        Problem supplying ``alpha`` and ``dt``.

    Returns
    -------
    result : `lsst.sim.offload.StateVector`
        Advanced state; boundary values unchanged.
    """
    grid = state.grid
    image = state.asImage()
    if grid.side < 3:
        return state
    halfR = 0.5*prob.meshRatio(grid)
    bands = _tridiagonalBands(grid.side - 2, halfR)

    # Half step 1: implicit in x (axis 1), explicit in y (axis 0).
    half = np.array(image)
    rhs = image[1:-1, 1:-1] + halfR*(image[2:, 1:-1] - 2.0*image[1:-1, 1:-1] + image[:-2, 1:-1])
    rhs[:, 0] += halfR*image[1:-1, 0]
    rhs[:, -1] += halfR*image[1:-1, -1]
    half[1:-1, 1:-1] = scipy.linalg.solve_banded((1, 1), bands, rhs.T, check_finite=False).T

    # Half step 2: implicit in y, explicit in x.
    out = np.array(image)
    rhs = half[1:-1, 1:-1] + halfR*(half[1:-1, 2:] - 2.0*half[1:-1, 1:-1] + half[1:-1, :-2])
    rhs[0, :] += halfR*image[0, 1:-1]
    rhs[-1, :] += halfR*image[-1, 1:-1]
    out[1:-1, 1:-1] = scipy.linalg.solve_banded((1, 1), bands, rhs, check_finite=False)
    if not np.all(np.isfinite(out)):
        raise RuntimeError("ADI step produced non-finite values")
    return StateVector(grid, out.ravel(), copy=False)


_STEPPERS = {
    ModelKind.FTCS_EXPLICIT: ftcsStep,
    ModelKind.ADI_CRANK_NICOLSON: adiStep,
}


def modelStep(kind, prob):
    """Return a one-argument step function ``StateVector -> StateVector``.

    For `ModelKind.ADI_CRANK_NICOLSON` the returned function performs
    ``prob.nRef`` sub-steps of ``prob.dt/prob.nRef``, so its output lines
    up in time with one explicit step.
    """
    stepper = _STEPPERS[ModelKind(kind)]
    if ModelKind(kind) is ModelKind.ADI_CRANK_NICOLSON and prob.nRef > 1:
        sub = prob.subProblem()

        def step(state):
            for _ in range(prob.nRef):
                state = stepper(state, sub)
            return state
        return step
    return lambda state: stepper(state, prob)


def runChain(initial, kind, prob):
    """Compute the chain of states of one model.

    Parameters
    ----------
    initial : `lsst.sim.offload.StateVector`
        Initial state.
    kind : `ModelKind`
        Time stepping scheme.
    prob : `HeatProblem`
        Problem; ``prob.nSteps`` states are computed after ``initial``.

    Returns
    -------
    chain : `list` of `lsst.sim.offload.StateVector`
        ``prob.nSteps + 1`` states starting with ``initial``.
    """
    step = modelStep(kind, prob)
    chain = [initial]
    for _ in range(prob.nSteps):
        chain.append(step(chain[-1]))
    return chain


def denseStepMatrix(kind, grid, prob):
    """Materialize the linear step operator of a model on a small grid.

    Column ``i`` is the step applied to the ``i``-th unit vector, so
    ``matrix @ state.values`` equals one step for any state.

    Parameters
    ----------
    kind : `ModelKind`
        Time stepping scheme.
    grid : `lsst.sim.offload.GridLevel`
        Grid; use small levels only, the matrix has ``nPoints**2`` entries.
    prob : `HeatProblem`
        Problem.

    Returns
    -------
    matrix : `numpy.ndarray`
        ``(nPoints, nPoints)`` step operator.
    """
    step = modelStep(kind, prob)
    matrix = np.empty((grid.nPoints, grid.nPoints))
    for i in range(grid.nPoints):
        unit = np.zeros(grid.nPoints)
        unit[i] = 1.0
        matrix[:, i] = step(StateVector(grid, unit, copy=False)).values
    return matrix
