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

__all__ = ["SurrogateTracker", "EnsembleTracker", "makeTracker"]

from .ensembleKalmanFilter import (PartialObservation, analyze, forecast, generateMembers,
                                   screenAnalysis, PINV_REL_TOL)
from .heatSolvers import ftcsStep


class SurrogateTracker:
    """The surrogate state a client publishes, advanced with the explicit
    model.

    The same class runs on the client, where it produces the published
    chain, and on the server as the mobile state tracker, so both sides
    compute bit-identical states.

    Parameters
    ----------
    problem : `lsst.sim.offload.HeatProblem`
        Problem parameters of the surrogate model.
    """

    def __init__(self, problem):
        self.problem = problem
        self.published = None
        self.step = None
        self.candidate = None

    def reset(self, state, step):
        """Start tracking from ``state`` at ``step``."""
        self.published = state
        self.step = step
        self.candidate = None

    def replace(self, state, step):
        """Adopt a state received in a full update or stream."""
        self.reset(state, step)

    def prepare(self):
        """Compute the surrogate result of the next step without publishing
        it.  Repeated calls return the same result.
        """
        if self.candidate is None:
            self.candidate = ftcsStep(self.published, self.problem)
        return self.candidate

    def certify(self):
        """Publish the prepared result of the next step."""
        self.published = self.prepare()
        self.step += 1
        self.candidate = None
        return self.published


class EnsembleTracker(SurrogateTracker):
    """The ensemble behind a filtering client's published state.

    Certified steps publish the forecast mean, partial updates the mean of
    the analyzed ensemble, full updates the received state around which a
    new ensemble is generated.

    Parameters
    ----------
    problem : `lsst.sim.offload.HeatProblem`
        Problem parameters of the surrogate model.
    nMembers : `int`
        Ensemble size.
    seedPolicy : `lsst.sim.offload.SeedPolicy`
        Seed derivation for member generation.
    sigma : `float`
        Perturbation width.
    relTol : `float`, optional
        Eigenvalue cutoff of the Kalman gain pseudo-inverse.
    """

    def __init__(self, problem, nMembers, seedPolicy, sigma, relTol=PINV_REL_TOL):
        SurrogateTracker.__init__(self, problem)
        self.nMembers = nMembers
        self.seedPolicy = seedPolicy
        self.sigma = sigma
        self.relTol = relTol
        self.ensemble = None

    def _step(self, state):
        return ftcsStep(state, self.problem)

    def reset(self, state, step):
        SurrogateTracker.reset(self, state, step)
        self.ensemble = generateMembers(state, self.nMembers, self.seedPolicy, step, self.sigma)

    def prepare(self):
        """Forecast the ensemble and return the forecast mean."""
        if self.candidate is None:
            self.candidate = forecast(self.ensemble, self._step)
        return self.candidate.mean()

    @property
    def forecastEnsemble(self):
        self.prepare()
        return self.candidate

    def certify(self):
        self.prepare()
        self.ensemble = self.candidate
        return self._publish(self.ensemble)

    def _observation(self, indices, values):
        return PartialObservation(indices, values, self.ensemble.grid.nPoints)

    def analyzeCandidate(self, indices, values):
        """Return the analyzed ensemble for a candidate selection without
        adopting it.
        """
        return analyze(self.forecastEnsemble, self._observation(indices, values), self.relTol)

    def screenCandidate(self, indices, values):
        """Cheap estimate of the analyzed mean for a candidate selection."""
        return screenAnalysis(self.forecastEnsemble, self._observation(indices, values), self.relTol)

    def assimilate(self, indices, values, analyzed=None):
        """Adopt the analysis of a partial update and publish its mean.

        Parameters
        ----------
        indices, values : array-like
            Points and values of the update.
        analyzed : `lsst.sim.offload.Ensemble`, optional
            Analysis already computed for exactly these points.
        """
        if analyzed is None:
            analyzed = self.analyzeCandidate(indices, values)
        self.ensemble = analyzed
        return self._publish(analyzed)

    def _publish(self, ensemble):
        self.published = ensemble.mean()
        self.step = ensemble.step
        self.candidate = None
        return self.published


def makeTracker(strategy, problem, nMembers, seedPolicy, sigma, relTol=PINV_REL_TOL):
    """Make the tracker matching a strategy.

    Parameters
    ----------
    strategy : `lsst.sim.offload.Strategy`
        Strategy of the session.
    problem : `lsst.sim.offload.HeatProblem`
        Problem parameters.
    nMembers : `int`
        Ensemble size, used by filtering strategies.
    seedPolicy : `lsst.sim.offload.SeedPolicy`
        Seed derivation, used by filtering strategies.
    sigma : `float`
        Perturbation width, used by filtering strategies.
    relTol : `float`, optional
        Pseudo-inverse cutoff of the analysis, used by filtering
        strategies.
    """
    if strategy.usesEnsemble:
        return EnsembleTracker(problem, nMembers, seedPolicy, sigma, relTol)
    return SurrogateTracker(problem)
