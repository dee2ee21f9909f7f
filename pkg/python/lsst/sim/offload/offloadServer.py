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

__all__ = ["OffloadServerConfig", "OffloadServerTask", "STRATEGY_NAMES"]

import math

import numpy as np

import lsst.pex.config as pexConfig
import lsst.pipe.base as pipeBase
from lsst.utils.timer import timeMethod

from .costModel import (CostModel, CostModelConfig, adiFlops, analysisFlops, forecastFlops, ftcsFlops,
                        generateFlops, qualityFlops, screenFlops)
from .ensembleKalmanFilter import EnsembleConfig, SeedPolicy
from .exceptions import DimensionError, SessionClosedError
from .grid import Restriction, makeGrid, makeInitialState
from .heatSolvers import HeatProblemConfig, ModelKind, checkFtcsStability, modelStep
from .protocol import (CertifyMessage, FullUpdateMessage, InitMessage, MessageType, PartialUpdateMessage,
                       Strategy, StreamStateMessage, encode)
from .quality import QualityConfig, countViolationPoints, selectViolationPoints, stepQuality
from .syntheticUpdates import SyntheticUpdateConfig, SyntheticUpdateInjector
from .trackers import makeTracker
from .transport import VirtualClock

STRATEGY_NAMES = tuple(strategy.configName for strategy in Strategy)


class OffloadServerConfig(pexConfig.Config):
    """Configuration for `OffloadServerTask`.
    """
    problem = pexConfig.ConfigField(
        doc="Heat problem and grid levels.",
        dtype=HeatProblemConfig,
    )
    quality = pexConfig.ConfigField(
        doc="Quality constraint on the client's states.",
        dtype=QualityConfig,
    )
    ensemble = pexConfig.ConfigField(
        doc="Ensemble for partial updates.",
        dtype=EnsembleConfig,
    )
    strategy = pexConfig.ChoiceField(
        doc="How the server keeps the client's states up to date.",
        dtype=str,
        default="partialUpdate",
        allowed={
            "simpleStream": "Stream every reference state at reference resolution.",
            "advancedStream": "Stream every reference state restricted to the surrogate grid.",
            "fullUpdate": "Certify surrogate results; send the restricted reference state otherwise.",
            "partialUpdate": "Certify forecast means; send violation points for an ensemble analysis "
                             "otherwise.",
            "combined": "As partialUpdate, but send a full update when too many points violate.",
        },
    )
    combinedThreshold = pexConfig.RangeField(
        doc="Largest partial update of the combined strategy, as a fraction of the surrogate points.",
        dtype=float,
        default=0.2,
        min=0.0,
        max=1.0,
    )
    initialSeed = pexConfig.Field(
        doc="Seed of the random initial state.",
        dtype=int,
        default=0,
    )
    linearSearchLimit = pexConfig.RangeField(
        doc="Selection sizes tried one by one before the violation point search gallops.",
        dtype=int,
        default=64,
        min=1,
    )
    maxSelectionFraction = pexConfig.RangeField(
        doc="Largest partial update tried, as a fraction of the surrogate points; beyond it the "
            "server falls back to a full update.",
        dtype=float,
        default=1.0,
        min=0.0,
        max=1.0,
        inclusiveMin=False,
        inclusiveMax=True,
    )
    synthetic = pexConfig.ConfigField(
        doc="Forced update decisions.",
        dtype=SyntheticUpdateConfig,
    )
    costModel = pexConfig.ConfigField(
        doc="Compute time charged in virtual time.",
        dtype=CostModelConfig,
    )
    keepReferenceChain = pexConfig.Field(
        doc="Keep every reference state in the result, for quality evaluation.",
        dtype=bool,
        default=True,
    )


class OffloadServerTask(pipeBase.Task):
    """Compute the reference solution and keep a client's approximate
    solution within the quality bound.

    For every step the server advances the reference model and, depending
    on the strategy, streams the state or advances its mobile state tracker
    (the same surrogate or ensemble computation the client performs) and
    decides between a certification, a partial update and a full update.

    Notes
    -----
    With a virtual-time transport the task keeps its own compute timeline:
    every computation is charged by the cost model, and a frame is handed
    to the transport when the computation producing it has finished.  A
    full send queue stalls the computation.
    """
    ConfigClass = OffloadServerConfig
    _DefaultName = "offloadServer"

    @timeMethod
    def run(self, transport, initialState=None):
        """Serve one session.

        Parameters
        ----------
        transport : `lsst.sim.offload.EmulatedChannel` or `lsst.sim.offload.TcpTransport`
            Open transport to the client.
        initialState : `lsst.sim.offload.StateVector`, optional
            Initial state on the reference grid; a random state from
            ``config.initialSeed`` if `None`.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            Result struct with components:

            ``strategy``
                Strategy of the session (`lsst.sim.offload.Strategy`).
            ``init``
                Handshake sent (`lsst.sim.offload.InitMessage`).
            ``trackedChain``
                States the client publishes, as tracked by the server
                (`list` of `lsst.sim.offload.StateVector`).
            ``referenceChain``
                Reference states, or `None` if not kept.
            ``restriction``
                Reference to surrogate grid restriction
                (`lsst.sim.offload.Restriction`).
            ``spec``
                Quality constraint (`lsst.sim.offload.QualitySpec`).
            ``log``
                One `lsst.pipe.base.Struct` per step with ``step``,
                ``messageType``, ``nBytes``, ``quality``, ``violating``,
                ``nViolationPoints``, ``nSelected``, ``feasible`` and
                ``sendTime``.
            ``nCertify``, ``nFull``, ``nPartial``, ``nStream``
                Message counts (`int`).
            ``bytesSent``
                Bytes handed to the transport, Init included (`int`).
            ``meanViolationFraction``
                Mean fraction of surrogate points carried by partial
                updates, NaN without partial updates (`float`).
            ``meanViolationPointFraction``
                Mean fraction of surrogate points violating the bound over
                the violating steps, NaN without violations (`float`).
            ``finishTime``
                Virtual time the last frame was handed over (`float`).
            ``aborted``
                `True` if the transport failed mid-session (`bool`).
        """
        config = self.config
        strategy = Strategy.fromName(config.strategy)
        problem = config.problem.makeProblem()
        spec = config.quality.makeSpec()
        surrogateGrid = makeGrid(config.problem.surrogateLevel)
        referenceGrid = makeGrid(config.problem.referenceLevel)
        restriction = Restriction(referenceGrid, surrogateGrid)
        if not strategy.isStream:
            checkFtcsStability(surrogateGrid, problem)
        if initialState is None:
            initialState = makeInitialState(referenceGrid, config.initialSeed)
        elif initialState.grid != referenceGrid:
            raise DimensionError("Initial state on %r, reference grid is %r" % (initialState.grid,
                                                                                 referenceGrid))

        sigma = config.ensemble.getSigma(spec.qMax)
        cost = CostModel(config.costModel, "server")
        clock = VirtualClock()
        virtual = transport.isVirtual
        injector = SyntheticUpdateInjector(config.synthetic, surrogateGrid)
        referenceStep = modelStep(ModelKind.ADI_CRANK_NICOLSON, problem)
        nPoints = surrogateGrid.nPoints

        restrictedInitial = restriction.apply(initialState)
        init = InitMessage(surrogateLevel=surrogateGrid.level, referenceLevel=referenceGrid.level,
                           nSteps=problem.nSteps, dt=problem.dt, alpha=problem.alpha, qMax=spec.qMax,
                           sigma=sigma, norm=spec.norm, nMembers=config.ensemble.nMembers,
                           basicSeed=config.ensemble.basicSeed, strategy=strategy,
                           initialState=(initialState if strategy is Strategy.SIMPLE_STREAM
                                         else restrictedInitial).values)
        tracker = makeTracker(strategy, problem, config.ensemble.nMembers,
                              SeedPolicy(config.ensemble.basicSeed), sigma, config.ensemble.pinvRelTol)
        setup = cost.run(generateFlops(nPoints, config.ensemble.nMembers) if strategy.usesEnsemble else 0.0,
                         tracker.reset, restrictedInitial, 0)
        clock.advance(setup.seconds)

        context = pipeBase.Struct(strategy=strategy, spec=spec, tracker=tracker, cost=cost,
                                  injector=injector, nPoints=nPoints, problem=problem)
        trackedChain = [restrictedInitial]
        referenceChain = [initialState] if config.keepReferenceChain else None
        log = []
        counts = {messageType: 0 for messageType in MessageType}
        bytesSent = 0
        aborted = False
        reference = initialState
        try:
            bytesSent += self._send(transport, encode(init), clock, virtual)
            for step in range(1, problem.nSteps + 1):
                advanced = cost.run(adiFlops(referenceGrid.nPoints, problem.nRef), referenceStep, reference)
                clock.advance(advanced.seconds)
                reference = advanced.result
                restricted = restriction.apply(reference)
                decision = self._decide(step, reference, restricted, context)
                clock.advance(decision.seconds)
                frame = encode(decision.message)
                bytesSent += self._send(transport, frame, clock, virtual)
                counts[decision.message.messageType] += 1
                trackedChain.append(decision.published)
                if referenceChain is not None:
                    referenceChain.append(reference)
                log.append(pipeBase.Struct(step=step, messageType=decision.message.messageType,
                                           nBytes=len(frame), quality=decision.quality,
                                           violating=decision.violating,
                                           nViolationPoints=decision.nViolationPoints,
                                           nSelected=decision.nSelected,
                                           feasible=decision.feasible, sendTime=clock.now()))
                self.log.debug("Step %d: %s, %d bytes, q=%g", step, decision.message.messageType.name,
                               len(frame), decision.quality)
        except (SessionClosedError, OSError) as e:
            self.log.warning("Transport failed after %d steps: %s", len(log), e)
            aborted = True

        partialSizes = [entry.nSelected for entry in log
                        if entry.messageType == MessageType.PARTIAL_UPDATE]
        meanViolationFraction = float(np.mean(partialSizes))/nPoints if partialSizes else math.nan
        violationCounts = [entry.nViolationPoints for entry in log if entry.violating]
        meanViolationPointFraction = (float(np.mean(violationCounts))/nPoints if violationCounts
                                      else math.nan)
        self.log.info("Strategy %s: %d certify, %d full, %d partial, %d stream messages; %d bytes",
                      strategy.configName, counts[MessageType.CERTIFY], counts[MessageType.FULL_UPDATE],
                      counts[MessageType.PARTIAL_UPDATE], counts[MessageType.STREAM_STATE], bytesSent)
        return pipeBase.Struct(
            strategy=strategy,
            init=init,
            trackedChain=trackedChain,
            referenceChain=referenceChain,
            restriction=restriction,
            spec=spec,
            log=log,
            nCertify=counts[MessageType.CERTIFY],
            nFull=counts[MessageType.FULL_UPDATE],
            nPartial=counts[MessageType.PARTIAL_UPDATE],
            nStream=counts[MessageType.STREAM_STATE],
            bytesSent=bytesSent,
            meanViolationFraction=meanViolationFraction,
            meanViolationPointFraction=meanViolationPointFraction,
            finishTime=clock.now(),
            aborted=aborted,
        )

    @staticmethod
    def _send(transport, frame, clock, virtual):
        """Hand a frame to the transport; a full queue stalls the virtual
        compute timeline until the frame is accepted.
        """
        if virtual:
            sent = transport.send(frame, at=clock.now())
            clock.advanceTo(sent.enqueueTime)
        else:
            transport.send(frame)
        return len(frame)

    def _decide(self, step, reference, restricted, context):
        """Produce the message for one step and update the tracker.

        Returns
        -------
        decision : `lsst.pipe.base.Struct`
            Result struct with components ``message``, ``published`` (the
            tracked client state after the step), ``quality``,
            ``violating``, ``nViolationPoints``, ``nSelected``,
            ``feasible`` and ``seconds`` (compute time charged).
        """
        strategy = context.strategy
        if strategy is Strategy.SIMPLE_STREAM:
            return self._decision(StreamStateMessage(step, reference.values), restricted)
        if strategy is Strategy.ADVANCED_STREAM:
            return self._decision(StreamStateMessage(step, restricted.values), restricted)
        if strategy is Strategy.FULL_UPDATE:
            return self._decideFullUpdate(step, restricted, context)
        return self._decideFiltering(step, restricted, context)

    @staticmethod
    def _decision(message, published, quality=math.nan, violating=False, nSelected=0, feasible=True,
                  seconds=0.0, nViolationPoints=0):
        return pipeBase.Struct(message=message, published=published, quality=quality, violating=violating,
                               nSelected=nSelected, feasible=feasible, seconds=seconds,
                               nViolationPoints=nViolationPoints)

    def _decideFullUpdate(self, step, restricted, context):
        tracker, cost, spec = context.tracker, context.cost, context.spec
        prepared = cost.run(ftcsFlops(context.nPoints), tracker.prepare)
        measured = cost.run(qualityFlops(context.nPoints), stepQuality, prepared.result, restricted, spec)
        seconds = prepared.seconds + measured.seconds
        quality = measured.result
        violating = quality > spec.qMax
        nViolationPoints = countViolationPoints(prepared.result, restricted, spec) if violating else 0
        update = violating
        if context.injector.active:
            update = context.injector.decide(step).forced
        if update:
            tracker.replace(restricted, step)
            return self._decision(FullUpdateMessage(step, restricted.values), restricted, quality, violating,
                                  feasible=True, seconds=seconds, nViolationPoints=nViolationPoints)
        return self._decision(CertifyMessage(step), tracker.certify(), quality, violating, seconds=seconds,
                              nViolationPoints=nViolationPoints)

    def _decideFiltering(self, step, restricted, context):
        tracker, cost, spec, nPoints = context.tracker, context.cost, context.spec, context.nPoints
        nMembers = tracker.nMembers
        prepared = cost.run(forecastFlops(nPoints, nMembers), tracker.prepare)
        measured = cost.run(qualityFlops(nPoints), stepQuality, prepared.result, restricted, spec)
        charged = [prepared.seconds + measured.seconds]
        quality = measured.result
        violating = quality > spec.qMax
        nViolationPoints = countViolationPoints(prepared.result, restricted, spec) if violating else 0
        combined = context.strategy is Strategy.COMBINED
        threshold = self.config.combinedThreshold*nPoints

        def fullUpdate(feasible):
            regenerated = cost.run(generateFlops(nPoints, nMembers), tracker.replace, restricted, step)
            return self._decision(FullUpdateMessage(step, restricted.values), restricted, quality, violating,
                                  feasible=feasible, seconds=sum(charged) + regenerated.seconds,
                                  nViolationPoints=nViolationPoints)

        if context.injector.active:
            forced = context.injector.decide(step)
            if not forced.forced:
                return self._decision(CertifyMessage(step), tracker.certify(), quality, violating,
                                      seconds=sum(charged), nViolationPoints=nViolationPoints)
            if combined and len(forced.indices) > threshold:
                return fullUpdate(True)
            values = restricted.values[forced.indices]
            analyzed = cost.run(analysisFlops(nPoints, len(forced.indices), nMembers),
                                tracker.analyzeCandidate, forced.indices, values)
            charged.append(analyzed.seconds)
            published = tracker.assimilate(forced.indices, values, analyzed.result)
            return self._decision(PartialUpdateMessage(step, forced.indices, values), published, quality,
                                  violating, nSelected=len(forced.indices), seconds=sum(charged),
                                  nViolationPoints=nViolationPoints)

        if not violating:
            return self._decision(CertifyMessage(step), tracker.certify(), quality, violating,
                                  seconds=sum(charged), nViolationPoints=nViolationPoints)

        def analyze(indices, values):
            analyzed = cost.run(analysisFlops(nPoints, len(indices), nMembers), tracker.analyzeCandidate,
                                indices, values)
            charged.append(analyzed.seconds)
            return analyzed.result

        def screen(indices, values):
            screened = cost.run(screenFlops(nPoints, len(indices), nMembers), tracker.screenCandidate,
                                indices, values)
            charged.append(screened.seconds)
            return screened.result

        maxFraction = self.config.maxSelectionFraction
        if combined:
            maxFraction = min(maxFraction, self.config.combinedThreshold)
        report = selectViolationPoints(tracker.forecastEnsemble, restricted, spec, None, analyze, step=step,
                                       screen=screen, linearSearchLimit=self.config.linearSearchLimit,
                                       maxSelectionFraction=maxFraction)
        if not report.feasible or (combined and len(report) > threshold):
            if not report.feasible:
                self.log.debug("Step %d: no verified partial update within %d points; sending full update",
                               step, len(report))
            return fullUpdate(report.feasible)
        published = tracker.assimilate(report.indices, report.values, report.analysis)
        return self._decision(PartialUpdateMessage(step, report.indices, report.values), published, quality,
                              violating, nSelected=len(report), seconds=sum(charged),
                              nViolationPoints=nViolationPoints)
