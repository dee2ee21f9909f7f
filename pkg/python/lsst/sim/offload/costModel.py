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

__all__ = ["CostModelConfig", "CostModel", "ftcsFlops", "adiFlops", "forecastFlops", "qualityFlops",
           "analysisFlops", "screenFlops", "generateFlops"]

import time

import lsst.pex.config as pexConfig
from lsst.pipe.base import Struct


class CostModelConfig(pexConfig.Config):
    """Compute time charged to the virtual timelines of both nodes.
    """
    mode = pexConfig.ChoiceField(
        doc="How compute durations are obtained.",
        dtype=str,
        default="analytic",
        allowed={
            "analytic": "Operation counts divided by the node's rate; exactly reproducible.",
            "measured": "Wall-clock duration on this host times the node's slowdown.",
        },
    )
    serverFlopRate = pexConfig.RangeField(
        doc="Floating point operations per second of the server in analytic mode.",
        dtype=float,
        default=2e11,
        min=0.0,
        inclusiveMin=False,
    )
    clientSlowdown = pexConfig.RangeField(
        doc="How many times slower the client computes than the server.",
        dtype=float,
        default=10.0,
        min=0.0,
        inclusiveMin=False,
    )
    decodeFlopsPerByte = pexConfig.RangeField(
        doc="Operations charged per received byte for decoding in analytic mode.",
        dtype=float,
        default=10.0,
        min=0.0,
    )


def ftcsFlops(nPoints):
    return 6.0*nPoints


def adiFlops(nPoints, nRef=1):
    return 24.0*nPoints*nRef


def qualityFlops(nPoints):
    return 2.0*nPoints


def forecastFlops(nPoints, nMembers):
    return nMembers*ftcsFlops(nPoints) + 2.0*nPoints*nMembers


def generateFlops(nPoints, nMembers):
    return 20.0*nPoints*nMembers


def analysisFlops(nPoints, nObserved, nMembers):
    """Operations of one analysis with ``nObserved`` points: covariance
    products, the eigendecomposition, the gain and the member updates.
    """
    n, m, k = float(nPoints), float(nObserved), float(nMembers)
    return 2*n*m*k + 2*m*m*k + 10*m**3 + 2*n*m*m + 2*n*m*k


def screenFlops(nPoints, nObserved, nMembers):
    n, m, k = float(nPoints), float(nObserved), float(nMembers)
    return 4*k*k*m + 4*n*k + 2*m*k


class CostModel:
    """Charges compute durations to a node's virtual timeline.

    Parameters
    ----------
    config : `CostModelConfig`
        Cost parameters.
    node : `str`
        ``"server"`` or ``"client"``; the client is ``clientSlowdown``
        times slower.
    """

    def __init__(self, config, node="server"):
        if node not in ("server", "client"):
            raise ValueError("Unknown node %r" % (node,))
        self.config = config
        self.node = node
        self.slowdown = 1.0 if node == "server" else config.clientSlowdown

    @property
    def measured(self):
        return self.config.mode == "measured"

    def seconds(self, flops):
        """Analytic duration of ``flops`` operations on this node."""
        return flops*self.slowdown/self.config.serverFlopRate

    def decodeSeconds(self, nBytes):
        return self.seconds(self.config.decodeFlopsPerByte*nBytes)

    def run(self, flops, func, *args, **kwargs):
        """Call ``func`` and charge its duration.

        Parameters
        ----------
        flops : `float`
            Operation count charged in analytic mode.
        func : callable
            Computation to run.
        *args, **kwargs
            Passed to ``func``.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            Result struct with components ``result`` (the return value of
            ``func``) and ``seconds`` (the charged duration).
        """
        start = time.perf_counter()
        result = func(*args, **kwargs)
        if self.measured:
            seconds = (time.perf_counter() - start)*self.slowdown
        else:
            seconds = self.seconds(flops)
        return Struct(result=result, seconds=seconds)
