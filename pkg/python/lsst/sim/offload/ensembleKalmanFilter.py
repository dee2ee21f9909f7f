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

__all__ = ["EnsembleConfig", "SeedPolicy", "Ensemble", "PartialObservation", "PINV_REL_TOL",
           "generateMembers", "forecast", "certifiedAdvance", "sampleCovarianceAction", "kalmanGain",
           "analyze", "screenAnalysis"]

import numpy as np
import scipy.linalg

import lsst.pex.config as pexConfig
from lsst.pipe.base import Struct

from .exceptions import ConfigurationError, DimensionError
from .grid import StateVector

PINV_REL_TOL = 1e-10

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class EnsembleConfig(pexConfig.Config):
    """Ensemble used to assimilate partial updates.
    """
    nMembers = pexConfig.RangeField(
        doc="Number of ensemble members.",
        dtype=int,
        default=50,
        min=2,
        max=2**16 - 1,
    )
    sigma = pexConfig.Field(
        doc="Standard deviation of the member perturbations; None uses half the quality bound.",
        dtype=float,
        default=None,
        optional=True,
    )
    basicSeed = pexConfig.RangeField(
        doc="Basic seed from which the seed of every member generation is derived.",
        dtype=int,
        default=20150901,
        min=0,
        max=2**64 - 1,
    )
    pinvRelTol = pexConfig.RangeField(
        doc="Eigenvalues of the observed covariance below this fraction of the largest one are dropped "
            "from its pseudo-inverse.  Client and server must agree.",
        dtype=float,
        default=PINV_REL_TOL,
        min=0.0,
        max=1.0,
        inclusiveMin=False,
    )

    def validate(self):
        pexConfig.Config.validate(self)
        if self.sigma is not None and not self.sigma >= 0:
            raise ValueError("sigma must be non-negative; got %r" % (self.sigma,))

    def getSigma(self, qMax):
        """Return the perturbation width, defaulting to ``qMax/2``."""
        return 0.5*qMax if self.sigma is None else self.sigma


class SeedPolicy:
    """Derives the random seed of each member generation from a basic seed
    and the step number, identically on every platform.

    Parameters
    ----------
    basicSeed : `int`
        Unsigned 64-bit basic seed.
    """

    def __init__(self, basicSeed):
        if not 0 <= basicSeed <= _MASK64:
            raise ConfigurationError("basicSeed must fit in 64 unsigned bits; got %r" % (basicSeed,))
        self.basicSeed = int(basicSeed)

    def derive(self, step):
        """Return the 64-bit seed for member generation at ``step``."""
        z = (self.basicSeed ^ (int(step)*_GOLDEN_GAMMA)) & _MASK64
        z = ((z ^ (z >> 30))*0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27))*0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def __repr__(self):
        return "SeedPolicy(%d)" % self.basicSeed


class Ensemble:
    """Perturbed copies of a surrogate state.

    Parameters
    ----------
    grid : `lsst.sim.offload.GridLevel`
        Grid of every member.
    members : `numpy.ndarray`
        ``(nMembers, nPoints)`` member values; stored read-only.
    step : `int`
        Time step index the members belong to.
    """

    def __init__(self, grid, members, step):
        members = np.asarray(members, dtype=np.float64)
        if members.ndim != 2 or members.shape[1] != grid.nPoints:
            raise DimensionError("Members on %r need shape (n, %d); got %s" %
                                 (grid, grid.nPoints, members.shape))
        if members.shape[0] < 2:
            raise ConfigurationError("An ensemble needs at least 2 members; got %d" % members.shape[0])
        members.setflags(write=False)
        self.grid = grid
        self.members = members
        self.step = int(step)
        self._mean = None

    @property
    def nMembers(self):
        return self.members.shape[0]

    def mean(self):
        """Return the ensemble mean, the state a client publishes
        (`lsst.sim.offload.StateVector`).
        """
        if self._mean is None:
            self._mean = StateVector(self.grid, self.members.mean(axis=0), copy=False)
        return self._mean

    def deviations(self):
        """Return member deviations from the mean, ``(nMembers, nPoints)``."""
        return self.members - self.mean().values

    def member(self, j):
        return StateVector(self.grid, self.members[j])

    def isIdentical(self, other):
        return (self.grid == other.grid and self.step == other.step
                and self.members.tobytes() == other.members.tobytes())

    def __repr__(self):
        return "Ensemble(%r, nMembers=%d, step=%d)" % (self.grid, self.nMembers, self.step)


class PartialObservation:
    """Exact values observed at a subset of the grid points.

    Parameters
    ----------
    indices : array-like of `int`
        Observed points, strictly increasing.
    values : array-like of `float`
        Observed values, finite.
    nPoints : `int`, optional
        Number of grid points; enables the range check.
    """

    def __init__(self, indices, values, nPoints=None):
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if indices.ndim != 1 or indices.shape != values.shape:
            raise DimensionError("Observation needs matching 1-d indices and values; got %s and %s" %
                                 (indices.shape, values.shape))
        if len(indices) > 1 and not np.all(np.diff(indices) > 0):
            raise ValueError("Observation indices must be strictly increasing")
        if len(indices) > 0 and (indices[0] < 0 or (nPoints is not None and indices[-1] >= nPoints)):
            raise ValueError("Observation index out of range [0, %s)" % (nPoints,))
        if not np.all(np.isfinite(values)):
            raise ValueError("Observation values must be finite")
        self.indices = indices
        self.values = values

    @property
    def pairs(self):
        """``(index, value)`` pairs (`list`)."""
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def __len__(self):
        return len(self.indices)


def generateMembers(state, nMembers, seedPolicy, step, sigma):
    """Generate an ensemble around a state.

    Member ``j`` is ``state`` plus Gaussian noise of width ``sigma`` at the
    interior points.  The noise is drawn from a Mersenne Twister stream
    seeded with ``seedPolicy.derive(step)``, member after member, each
    member taking ``nPoints`` consecutive normal variates; boundary
    variates are drawn and discarded.

    Parameters
    ----------
    state : `lsst.sim.offload.StateVector`
        Center of the ensemble.
    nMembers : `int`
        Number of members, at least 2.
    seedPolicy : `SeedPolicy`
        Seed derivation.
    step : `int`
        Step index of ``state``.
    sigma : `float`
        Perturbation standard deviation, non-negative.

    Returns
    -------
    ensemble : `Ensemble`
        The members, all with ``state``'s boundary values.

    Raises
    ------
    ConfigurationError
        Raised if ``nMembers < 2`` or ``sigma < 0``.
    """
    if nMembers < 2:
        raise ConfigurationError("An ensemble needs at least 2 members; got %d" % nMembers)
    if not sigma >= 0:
        raise ConfigurationError("sigma must be non-negative; got %r" % (sigma,))
    grid = state.grid
    rng = np.random.Generator(np.random.MT19937(seedPolicy.derive(step)))
    noise = rng.standard_normal((nMembers, grid.nPoints))
    noise *= sigma
    noise[:, grid.boundaryMask] = 0.0
    members = state.values + noise
    return Ensemble(grid, members, step)


def forecast(ensemble, modelStep):
    """Advance every member by one model step.

    Parameters
    ----------
    ensemble : `Ensemble`
        Current members.
    modelStep : callable
        Deterministic ``StateVector -> StateVector`` step.

    Returns
    -------
    forecast : `Ensemble`
        Advanced members at ``ensemble.step + 1``.
    """
    members = np.empty_like(ensemble.members)
    for j in range(ensemble.nMembers):
        members[j] = modelStep(StateVector(ensemble.grid, ensemble.members[j], copy=False)).values
    return Ensemble(ensemble.grid, members, ensemble.step + 1)


def certifiedAdvance(ensemble, modelStep):
    """Advance a certified ensemble: a forecast without analysis.  The
    published state is the mean of the result.
    """
    return forecast(ensemble, modelStep)


def sampleCovarianceAction(ensemble, indices):
    """Apply the sample covariance of an ensemble to an observation
    operator without forming the covariance.

    Parameters
    ----------
    ensemble : `Ensemble`
        Ensemble with deviations ``A`` (members along rows).
    indices : array-like of `int`
        Observed points defining the selection operator ``H``.

    Returns
    -------
    result : `lsst.pipe.base.Struct`
        Result struct with components:

        ``cht``
            ``C H^T``, shape ``(nPoints, m)`` (`numpy.ndarray`).
        ``hcht``
            ``H C H^T``, shape ``(m, m)`` (`numpy.ndarray`).
    """
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        raise ValueError("At least one observed point is required")
    deviations = ensemble.deviations()
    observed = deviations[:, indices]
    norm = 1.0/(ensemble.nMembers - 1)
    cht = (deviations.T @ observed)*norm
    hcht = (observed.T @ observed)*norm
    return Struct(cht=cht, hcht=hcht)


def _pseudoInverse(hcht, relTol):
    eigenvalues, eigenvectors = scipy.linalg.eigh(hcht)
    largest = eigenvalues.max() if len(eigenvalues) else 0.0
    if not largest > 0:
        return np.zeros_like(hcht)
    keep = eigenvalues > relTol*largest
    kept = eigenvectors[:, keep]
    return (kept/eigenvalues[keep]) @ kept.T


def kalmanGain(cht, hcht, relTol=PINV_REL_TOL):
    """Compute the Kalman gain ``K = C H^T (H C H^T)^+``.

    The pseudo-inverse comes from a symmetric eigendecomposition that drops
    eigenvalues below ``relTol`` times the largest one, so rank-deficient
    and collapsed ensembles are handled.

    Parameters
    ----------
    cht : `numpy.ndarray`
        ``(n, m)`` cross covariance.
    hcht : `numpy.ndarray`
        ``(m, m)`` symmetric positive semi-definite observed covariance.
    relTol : `float`, optional
        Relative eigenvalue cutoff.

    Returns
    -------
    gain : `numpy.ndarray`
        ``(n, m)`` Kalman gain; zero when ``hcht`` is zero.
    """
    return cht @ _pseudoInverse(hcht, relTol)


def analyze(forecastEnsemble, observation, relTol=PINV_REL_TOL):
    """Assimilate exact point observations into a forecast ensemble.

    Every member is updated with the innovation form
    ``e = f + K (u - H f)``, ``K`` being computed once from the forecast
    ensemble.  Observations are perfect, so no observation noise is added.

    Parameters
    ----------
    forecastEnsemble : `Ensemble`
        Forecast members.
    observation : `PartialObservation`
        Observed points and values, at least one.
    relTol : `float`, optional
        Relative eigenvalue cutoff of the pseudo-inverse.

    Returns
    -------
    analyzed : `Ensemble`
        Analyzed members at the forecast step.
    """
    if len(observation) == 0:
        raise ValueError("Cannot analyze an empty observation")
    indices = observation.indices
    if indices[-1] >= forecastEnsemble.grid.nPoints:
        raise ValueError("Observation index %d out of range for %r" % (indices[-1], forecastEnsemble.grid))
    members = forecastEnsemble.members
    covariance = sampleCovarianceAction(forecastEnsemble, indices)
    inverse = _pseudoInverse(covariance.hcht, relTol)
    innovations = observation.values[np.newaxis, :] - members[:, indices]
    analyzed = members + (covariance.cht @ (inverse @ innovations.T)).T
    return Ensemble(forecastEnsemble.grid, analyzed, forecastEnsemble.step)


def screenAnalysis(forecastEnsemble, observation, relTol=PINV_REL_TOL):
    """Estimate the analyzed mean in ensemble space.

    Uses the thin SVD ``H A^T = U S V^T`` of the observed deviations, so the
    mean update is ``A^T U S^-1 V^T d`` with ``d`` the mean innovation; the
    cost is linear in the number of observed points.  Intended for
    searching selection sizes; the result agrees with `analyze` up to
    rounding.

    Returns
    -------
    mean : `lsst.sim.offload.StateVector`
        Estimated analyzed mean.
    """
    indices = observation.indices
    forecastMean = forecastEnsemble.mean()
    deviations = forecastEnsemble.deviations()
    observed = deviations[:, indices]
    innovation = observation.values - forecastMean.values[indices]
    left, singular, rightT = np.linalg.svd(observed, full_matrices=False)
    if len(singular) == 0 or not singular[0] > 0:
        return forecastMean
    keep = singular**2 > relTol*singular[0]**2
    weights = left[:, keep] @ ((rightT[keep] @ innovation)/singular[keep])
    return StateVector(forecastEnsemble.grid, forecastMean.values + deviations.T @ weights, copy=False)
