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

__all__ = ["OffloadClientConfig", "OffloadClientTask"]

from concurrent.futures import ThreadPoolExecutor

import lsst.pex.config as pexConfig
import lsst.pipe.base as pipeBase
from lsst.utils.timer import timeMethod

from .costModel import CostModel, CostModelConfig, analysisFlops, forecastFlops, ftcsFlops, generateFlops
from .ensembleKalmanFilter import PINV_REL_TOL, SeedPolicy
from .exceptions import ProtocolError
from .grid import Restriction, StateVector, makeGrid
from .heatSolvers import HeatProblem
from .protocol import (CertifyMessage, FullUpdateMessage, InitMessage, PartialUpdateMessage, Strategy,
                       StreamStateMessage, decode)
from .quality import QualitySpec
from .trackers import makeTracker


class OffloadClientConfig(pexConfig.Config):
    """Configuration for `OffloadClientTask`.
    """
    mode = pexConfig.ChoiceField(
        doc="When the client computes its own surrogate results.",
        dtype=str,
        default="optimistic",
        allowed={
            "optimistic": "Start computing the next step as soon as a state is published.",
            "pessimistic": "Compute only after the server's message for the step arrived.",
        },
    )
    costModel = pexConfig.ConfigField(
        doc="Compute time charged in virtual time.",
        dtype=CostModelConfig,
    )
    pinvRelTol = pexConfig.RangeField(
        doc="Pseudo-inverse cutoff of the ensemble analysis; must match the server's.",
        dtype=float,
        default=PINV_REL_TOL,
        min=0.0,
        max=1.0,
        inclusiveMin=False,
    )


class OffloadClientTask(pipeBase.Task):
    """Publish an approximate solution from the messages of an offloading
    server.

    The client learns everything about the session from the Init message,
    then publishes one state per step: its own surrogate result (or
    forecast mean) on a certification, the received state on a full update
    or stream, and the analyzed ensemble mean on a partial update.  It never
    publishes step ``i`` before the server's message for step ``i`` has
    arrived.

    Notes
    -----
    With a virtual-time transport the publish time of each step follows
    from the arrival times and the cost model.  An optimistic client starts
    computing step ``i`` right after publishing step ``i - 1``; a
    pessimistic client starts once the message for step ``i`` arrived.
    """
    ConfigClass = OffloadClientConfig
    _DefaultName = "offloadClient"

    @timeMethod
    def run(self, transport):
        """Run one session.

        Parameters
        ----------
        transport : `lsst.sim.offload.EmulatedChannel` or `lsst.sim.offload.TcpTransport`
            Open transport from the server.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            Result struct with components:

            ``init``
                Received handshake (`lsst.sim.offload.InitMessage`).
            ``strategy``
                Strategy of the session (`lsst.sim.offload.Strategy`).
            ``chain``
                Published states on the surrogate grid, ``nSteps + 1``
                of them (`list` of `lsst.sim.offload.StateVector`).
            ``publishTimes``
                Time each state was published (`list` of `float`).
            ``arrivalTimes``
                Arrival time of each step's message, Init first.
            ``messageTypes``
                Type of each step's message.
            ``nCertify``, ``nFull``, ``nPartial``, ``nStream``
                Message counts (`int`).
            ``totalLatency``
                Publish time of the last step (`float`).

        Raises
        ------
        ProtocolError
            Raised for a missing Init, a message out of step order or a
            message that does not fit the session.
        """
        cost = CostModel(self.config.costModel, "client")
        virtual = transport.isVirtual
        optimistic = self.config.mode == "optimistic"

        arrival = transport.recv()
        decoded = cost.run(cost.config.decodeFlopsPerByte*len(arrival.data), decode, arrival.data)
        init = decoded.result
        if not isinstance(init, InitMessage):
            raise ProtocolError("Expected Init, got %r" % (init,))
        session = self._openSession(init, self.config.pinvRelTol)
        tracker = session.tracker
        setup = cost.run(generateFlops(session.nPoints, init.nMembers) if init.strategy.usesEnsemble else 0.0,
                         tracker.reset, session.initial, 0)
        published = arrival.time + decoded.seconds + setup.seconds if virtual else transport.now()

        chain = [tracker.published]
        publishTimes = [published]
        arrivalTimes = [arrival.time]
        messageTypes = [init.messageType]
        counts = {"certify": 0, "full": 0, "partial": 0, "stream": 0}
        prepareFlops = (forecastFlops(session.nPoints, init.nMembers) if init.strategy.usesEnsemble
                        else ftcsFlops(session.nPoints))
        executor = ThreadPoolExecutor(max_workers=1) if optimistic and not virtual else None
        try:
            for step in range(1, init.nSteps + 1):
                pending = None
                if optimistic and not init.strategy.isStream:
                    if executor is not None:
                        pending = executor.submit(cost.run, prepareFlops, tracker.prepare)
                    else:
                        pending = cost.run(prepareFlops, tracker.prepare)
                arrival = transport.recv()
                decoded = cost.run(cost.config.decodeFlopsPerByte*len(arrival.data), decode, arrival.data)
                message = decoded.result
                prepared = pending.result() if executor is not None and pending is not None else pending
                if getattr(message, "step", None) != step:
                    raise ProtocolError("Expected a message for step %d, got %r" % (step, message))
                self._checkMessage(message, session)
                ready = max(arrival.time, published)

                if isinstance(message, CertifyMessage) or isinstance(message, PartialUpdateMessage):
                    if prepared is None:
                        prepared = cost.run(prepareFlops, tracker.prepare)
                        finish = ready + prepared.seconds + decoded.seconds
                    else:
                        # Decoding overlaps the background computation.
                        finish = max(arrival.time + decoded.seconds, published + prepared.seconds)
                    if isinstance(message, CertifyMessage):
                        tracker.certify()
                        counts["certify"] += 1
                    else:
                        assimilated = cost.run(analysisFlops(session.nPoints, message.count, init.nMembers),
                                               tracker.assimilate, message.indices, message.values)
                        finish += assimilated.seconds
                        counts["partial"] += 1
                elif isinstance(message, FullUpdateMessage):
                    state = StateVector(session.surrogateGrid, message.state)
                    replaced = cost.run(generateFlops(session.nPoints, init.nMembers)
                                        if init.strategy.usesEnsemble else 0.0,
                                        tracker.replace, state, step)
                    finish = ready + decoded.seconds + replaced.seconds
                    counts["full"] += 1
                else:
                    state = StateVector(session.streamGrid, message.state)
                    tracker.replace(session.streamRestriction.apply(state), step)
                    finish = ready + decoded.seconds
                    counts["stream"] += 1

                published = finish if virtual else transport.now()
                chain.append(tracker.published)
                publishTimes.append(published)
                arrivalTimes.append(arrival.time)
                messageTypes.append(message.messageType)
        finally:
            if executor is not None:
                executor.shutdown(wait=True)

        self.log.info("Published %d states (%d certified, %d full, %d partial, %d streamed); "
                      "latency %.3f s", len(chain), counts["certify"], counts["full"], counts["partial"],
                      counts["stream"], publishTimes[-1])
        return pipeBase.Struct(
            init=init,
            strategy=init.strategy,
            chain=chain,
            publishTimes=publishTimes,
            arrivalTimes=arrivalTimes,
            messageTypes=messageTypes,
            nCertify=counts["certify"],
            nFull=counts["full"],
            nPartial=counts["partial"],
            nStream=counts["stream"],
            totalLatency=publishTimes[-1],
        )

    @staticmethod
    def _openSession(init, relTol):
        """Set up grids and the tracker described by an Init message."""
        surrogateGrid = makeGrid(init.surrogateLevel)
        referenceGrid = makeGrid(init.referenceLevel)
        streamGrid = referenceGrid if init.strategy is Strategy.SIMPLE_STREAM else surrogateGrid
        streamRestriction = Restriction(streamGrid, surrogateGrid)
        if len(init.initialState) != streamGrid.nPoints:
            raise ProtocolError("Init carries %d initial values, expected %d" %
                                (len(init.initialState), streamGrid.nPoints))
        initial = streamRestriction.apply(StateVector(streamGrid, init.initialState))
        problem = HeatProblem(init.alpha, init.dt, init.nSteps)
        tracker = makeTracker(init.strategy, problem, init.nMembers, SeedPolicy(init.basicSeed), init.sigma,
                              relTol)
        return pipeBase.Struct(surrogateGrid=surrogateGrid, streamGrid=streamGrid,
                               streamRestriction=streamRestriction, initial=initial, tracker=tracker,
                               spec=QualitySpec(init.norm, init.qMax), nPoints=surrogateGrid.nPoints,
                               strategy=init.strategy)

    @staticmethod
    def _checkMessage(message, session):
        """Check that a step message fits the session."""
        strategy = session.strategy
        if isinstance(message, StreamStateMessage):
            if not strategy.isStream:
                raise ProtocolError("Stream state in a %s session" % strategy.configName)
            if len(message.state) != session.streamGrid.nPoints:
                raise ProtocolError("Stream state has %d values, expected %d" %
                                    (len(message.state), session.streamGrid.nPoints))
            return
        if strategy.isStream:
            raise ProtocolError("%r in a %s session" % (message, strategy.configName))
        if isinstance(message, FullUpdateMessage):
            if len(message.state) != session.nPoints:
                raise ProtocolError("Full update has %d values, expected %d" %
                                    (len(message.state), session.nPoints))
        elif isinstance(message, PartialUpdateMessage):
            if not strategy.usesEnsemble:
                raise ProtocolError("Partial update in a %s session" % strategy.configName)
            if message.indices[-1] >= session.nPoints:
                raise ProtocolError("Partial update index %d out of range" % message.indices[-1])
        elif not isinstance(message, CertifyMessage):
            raise ProtocolError("Unexpected %r" % (message,))
