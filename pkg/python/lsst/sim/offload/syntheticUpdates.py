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

__all__ = ["SyntheticUpdateConfig", "SyntheticUpdateInjector"]

import numpy as np

import lsst.pex.config as pexConfig
from lsst.pipe.base import Struct


class SyntheticUpdateConfig(pexConfig.Config):
    """Forced update decisions replacing the quality check, for studying
    latency as a function of update frequency and size.
    """
    mode = pexConfig.ChoiceField(
        doc="Update decision policy.",
        dtype=str,
        default="real",
        allowed={
            "real": "Decide from the quality constraint.",
            "bernoulli": "Update each step with the given probability; full updates for the full "
                         "update strategy, sizeFraction points otherwise.",
            "fixedSize": "Update each step with the given probability with exactly sizeFraction of "
                         "the points.",
        },
    )
    probability = pexConfig.RangeField(
        doc="Probability that a step is updated.",
        dtype=float,
        default=0.5,
        min=0.0,
        max=1.0,
        inclusiveMax=True,
    )
    sizeFraction = pexConfig.RangeField(
        doc="Fraction of the surrogate points carried by a forced partial update.",
        dtype=float,
        default=0.052,
        min=0.0,
        max=1.0,
        inclusiveMax=True,
    )
    seed = pexConfig.Field(
        doc="Seed of the decision stream.",
        dtype=int,
        default=1789,
    )


class SyntheticUpdateInjector:
    """Draws forced update decisions.

    Every step consumes one uniform variate, and a forced step additionally
    draws its points: uniformly among interior points, spilling over into
    boundary points only when more points are requested than the interior
    holds.  The stream does not depend on the strategy, so all strategies
    of a run see the same forced steps.

    Parameters
    ----------
    config : `SyntheticUpdateConfig`
        Policy.
    grid : `lsst.sim.offload.GridLevel`
        Surrogate grid.
    """

    def __init__(self, config, grid):
        self.config = config
        self.grid = grid
        self._rng = np.random.Generator(np.random.MT19937(config.seed))
        self.nSelected = min(grid.nPoints, max(1, int(round(config.sizeFraction*grid.nPoints))))
        self._interior = grid.interiorIndices
        self._boundary = np.flatnonzero(grid.boundaryMask)

    @property
    def active(self):
        return self.config.mode != "real"

    def decide(self, step):
        """Draw the decision for ``step``.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            Result struct with components:

            ``forced``
                `True` if the step must be updated (`bool`).
            ``indices``
                Points of a forced partial update, increasing
                (`numpy.ndarray`), or `None`.
        """
        if not self.active:
            return Struct(forced=False, indices=None)
        forced = bool(self._rng.random() < self.config.probability)
        if not forced:
            return Struct(forced=False, indices=None)
        nInterior = min(self.nSelected, len(self._interior))
        chosen = self._rng.choice(self._interior, size=nInterior, replace=False)
        if self.nSelected > nInterior:
            extra = self._rng.choice(self._boundary, size=self.nSelected - nInterior, replace=False)
            chosen = np.concatenate([chosen, extra])
        return Struct(forced=True, indices=np.sort(chosen))
