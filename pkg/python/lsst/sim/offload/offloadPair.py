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

__all__ = ["OffloadPairConfig", "OffloadPairTask", "runPair"]

import math
import threading

import lsst.pex.config as pexConfig
import lsst.pipe.base as pipeBase
from lsst.utils.timer import timeMethod

from .offloadClient import OffloadClientTask
from .offloadServer import OffloadServerTask
from .quality import chainQuality
from .transport import ChannelConfig, EmulatedChannel


class OffloadPairConfig(pexConfig.Config):
    """Configuration for `OffloadPairTask`.
    """
    server = pexConfig.ConfigurableField(
        target=OffloadServerTask,
        doc="Server node.",
    )
    client = pexConfig.ConfigurableField(
        target=OffloadClientTask,
        doc="Client node.",
    )
    channel = pexConfig.ConfigField(
        doc="Emulated link from server to client.",
        dtype=ChannelConfig,
    )

    def validate(self):
        pexConfig.Config.validate(self)
        if self.server.costModel.mode != self.client.costModel.mode:
            raise ValueError("Server and client must use the same cost model mode")
        if self.server.ensemble.pinvRelTol != self.client.pinvRelTol:
            raise ValueError("Server and client must use the same pseudo-inverse cutoff")


class OffloadPairTask(pipeBase.Task):
    """Run a server and a client connected by an emulated channel in one
    process.

    In virtual time the server runs to completion first and the client
    then reads the frames with their computed arrival times, which makes
    the run deterministic.  In real time the server runs in a background
    thread.
    """
    ConfigClass = OffloadPairConfig
    _DefaultName = "offloadPair"

    def __init__(self, **kwargs):
        pipeBase.Task.__init__(self, **kwargs)
        self.makeSubtask("server")
        self.makeSubtask("client")

    @timeMethod
    def run(self, initialState=None):
        """Run one session.

        Parameters
        ----------
        initialState : `lsst.sim.offload.StateVector`, optional
            Initial state on the reference grid.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            Result struct with components:

            ``server``
                Result of `OffloadServerTask.run`.
            ``client``
                Result of `OffloadClientTask.run`.
            ``channel``
                The channel, with its statistics
                (`lsst.sim.offload.EmulatedChannel`).
            ``qualityA``
                Overall quality of the client's chain against the reference
                chain (`float`).
            ``totalLatency``
                Publish time of the client's last state (`float`).
            ``bytesSent``
                Bytes carried by the channel (`int`).
            ``trackerFidelity``
                `True` if every state the server tracked is bit-identical
                to the state the client published (`bool`).
        """
        channel = EmulatedChannel(self.config.channel)
        if channel.isVirtual:
            try:
                serverResult = self.server.run(channel, initialState)
            finally:
                channel.close()
            clientResult = self.client.run(channel)
        else:
            outcome = {}

            def serve():
                try:
                    outcome["result"] = self.server.run(channel, initialState)
                except Exception as e:
                    outcome["error"] = e
                finally:
                    channel.close()

            thread = threading.Thread(target=serve, name="OffloadServer")
            thread.start()
            try:
                clientResult = self.client.run(channel)
            finally:
                thread.join()
            if "error" in outcome:
                raise outcome["error"]
            serverResult = outcome["result"]

        qualityA = math.nan
        if serverResult.referenceChain is not None:
            qualityA = chainQuality(clientResult.chain, serverResult.referenceChain, serverResult.spec,
                                    serverResult.restriction)
        trackerFidelity = (len(clientResult.chain) == len(serverResult.trackedChain)
                           and all(published.isIdentical(tracked) for published, tracked
                                   in zip(clientResult.chain, serverResult.trackedChain)))
        if not trackerFidelity:
            self.log.warning("Client states diverged from the server's tracked states")
        self.log.info("Session %s: Q_A=%g (bound %g), latency %.3f s, %d bytes",
                      serverResult.strategy.configName, qualityA, serverResult.spec.qMax,
                      clientResult.totalLatency, channel.stats.bytesSent)
        return pipeBase.Struct(
            server=serverResult,
            client=clientResult,
            channel=channel,
            qualityA=qualityA,
            totalLatency=clientResult.totalLatency,
            bytesSent=channel.stats.bytesSent,
            trackerFidelity=trackerFidelity,
        )


def runPair(config=None, initialState=None):
    """Run a server/client session with ``config`` (an
    `OffloadPairConfig`) and return the `OffloadPairTask` result.
    """
    return OffloadPairTask(config=config).run(initialState)
