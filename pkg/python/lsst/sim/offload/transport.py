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

__all__ = ["ChannelConfig", "VirtualClock", "TokenBucket", "TransportStats", "EmulatedChannel",
           "TcpListener", "TcpTransport", "parseAddress"]

import collections
import queue
import socket
import struct
import threading
import time

import lsst.pex.config as pexConfig
from lsst.pipe.base import Struct
from lsst.utils.logging import getLogger

from .exceptions import ConfigurationError, ProtocolError, SessionClosedError
from .protocol import HEADER_SIZE, MessageType, frameLength

_LOG = getLogger(__name__)

# Seconds between checks while close() waits for room in a full send queue.
_CLOSE_POLL_INTERVAL = 0.05

_TYPE_CODES = frozenset(int(t) for t in MessageType)


class ChannelConfig(pexConfig.Config):
    """Emulated link between server and client.
    """
    rate = pexConfig.RangeField(
        doc="Data rate in bits per second.",
        dtype=float,
        default=1e6,
        min=0.0,
        inclusiveMin=False,
    )
    latency = pexConfig.RangeField(
        doc="One-way delay in seconds.",
        dtype=float,
        default=0.05,
        min=0.0,
    )
    bucketBytes = pexConfig.RangeField(
        doc="Token bucket size in bytes (burst allowance).",
        dtype=int,
        default=32768,
        min=0,
    )
    maxQueueDepth = pexConfig.RangeField(
        doc="Frames that may wait for transmission before a send blocks.",
        dtype=int,
        default=64,
        min=1,
    )
    realTime = pexConfig.Field(
        doc="Enforce delays against the wall clock instead of computing them in virtual time.",
        dtype=bool,
        default=False,
    )


class VirtualClock:
    """A clock that only moves when told to.

    Parameters
    ----------
    start : `float`, optional
        Initial time in seconds.
    """

    def __init__(self, start=0.0):
        self._now = float(start)

    def now(self):
        return self._now

    def advance(self, seconds):
        """Move the clock forward by ``seconds`` (non-negative) and return
        the new time.
        """
        if seconds < 0:
            raise ValueError("Cannot advance a clock by %r s" % (seconds,))
        self._now += seconds
        return self._now

    def advanceTo(self, when):
        """Move the clock forward to ``when`` if that is later than now and
        return the new time.
        """
        self._now = max(self._now, when)
        return self._now


class TokenBucket:
    """Fluid token bucket deciding when each frame leaves the link.

    Tokens (bytes) accrue at ``rate`` up to ``capacity``.  Frames are
    transmitted one after another; a frame departs once all of its bytes
    have been paid for.  The bucket is empty when the session opens.

    Parameters
    ----------
    rate : `float`
        Token rate in bytes per second.
    capacity : `float`
        Bucket size in bytes.
    """

    def __init__(self, rate, capacity):
        if not rate > 0:
            raise ConfigurationError("Token rate must be positive; got %r" % (rate,))
        self.rate = float(rate)
        self.capacity = float(capacity)
        self._tokens = 0.0
        self._last = 0.0

    def schedule(self, nBytes, enqueueTime):
        """Schedule the next frame.

        Parameters
        ----------
        nBytes : `int`
            Frame size.
        enqueueTime : `float`
            Time the frame enters the link queue.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            Result struct with components:

            ``start``
                Time transmission begins (`float`).
            ``depart``
                Time the last byte leaves (`float`).
        """
        start = max(enqueueTime, self._last)
        tokens = min(self.capacity, self._tokens + self.rate*(start - self._last))
        if nBytes <= tokens:
            depart = start
            tokens -= nBytes
        else:
            depart = start + (nBytes - tokens)/self.rate
            tokens = 0.0
        self._tokens = tokens
        self._last = depart
        return Struct(start=start, depart=depart)


class TransportStats:
    """Per-session counters of a transport endpoint.
    """

    def __init__(self):
        self.bytesSent = 0
        self.messagesSent = collections.Counter()
        self.bytesReceived = 0
        self.messagesReceived = 0
        self.frames = []

    @staticmethod
    def _describe(frame):
        if not frame or frame[0] not in _TYPE_CODES:
            return None, None
        messageType = MessageType(frame[0])
        step = None
        if messageType != MessageType.INIT and len(frame) >= HEADER_SIZE + 4:
            step, = struct.unpack_from("<I", frame, HEADER_SIZE)
        return messageType, step

    def recordSent(self, frame, firstByteTime, lastByteTime):
        """Count a sent frame and remember when its first and last bytes
        went out.
        """
        messageType, step = self._describe(frame)
        self.bytesSent += len(frame)
        self.messagesSent[messageType.name if messageType is not None else "UNKNOWN"] += 1
        self.frames.append(Struct(messageType=messageType, step=step, nBytes=len(frame),
                                  firstByteTime=firstByteTime, lastByteTime=lastByteTime))

    def recordReceived(self, frame):
        self.bytesReceived += len(frame)
        self.messagesReceived += 1

    def firstByteTime(self, step):
        return next(f.firstByteTime for f in self.frames if f.step == step)

    def lastByteTime(self, step):
        return next(f.lastByteTime for f in self.frames if f.step == step)


class EmulatedChannel:
    """In-process link emulating a rate limit and a fixed delay.

    Frames are queued first in, first out, shaped by a `TokenBucket` and
    delivered ``latency`` seconds after their last byte leaves.  In virtual
    time the whole schedule is computed on ``send``; the sender runs first
    and the receiver reads the frames afterwards with their arrival times.
    In real time ``recv`` blocks until a frame's arrival time has passed
    on the wall clock.

    Parameters
    ----------
    config : `ChannelConfig`, optional
        Link parameters.
    """
    def __init__(self, config=None):
        if config is None:
            config = ChannelConfig()
        self.config = config
        self.realTime = config.realTime
        self.latency = config.latency
        self.maxQueueDepth = config.maxQueueDepth
        self.clock = None if self.realTime else VirtualClock()
        self.stats = TransportStats()
        self._bucket = TokenBucket(config.rate/8.0, config.bucketBytes)
        self._departures = collections.deque(maxlen=config.maxQueueDepth)
        self._inFlight = collections.deque()
        self._arrivals = collections.deque()
        self._closed = False
        self._condition = threading.Condition()
        self._wallStart = time.monotonic()

    @property
    def isVirtual(self):
        return not self.realTime

    @property
    def nPendingArrivals(self):
        """Frames not yet passed by `advance`."""
        with self._condition:
            return len(self._arrivals)

    def now(self):
        """Current time of the channel in seconds since it was opened."""
        if self.realTime:
            return time.monotonic() - self._wallStart
        return self.clock.now()

    def advance(self, seconds):
        """Advance the virtual clock.

        Returns
        -------
        arrivals : `list` of `lsst.pipe.base.Struct`
            Frames whose arrival time was passed by this advance, each with
            ``time`` and ``nBytes``.

        Raises
        ------
        ConfigurationError
            Raised in real-time mode.
        """
        if self.realTime:
            raise ConfigurationError("Cannot advance a real-time channel")
        now = self.clock.advance(seconds)
        with self._condition:
            due = []
            while self._arrivals and self._arrivals[0].time <= now:
                due.append(self._arrivals.popleft())
        return due

    def send(self, data, at=None):
        """Queue a frame.

        Parameters
        ----------
        data : `bytes`
            Frame to send.
        at : `float`, optional
            Virtual time the sender hands the frame over; defaults to the
            channel clock.  Must be `None` in real-time mode.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            Result struct with components ``enqueueTime`` (later than
            ``at`` when the queue was full), ``startTime``, ``departTime``
            and ``deliveryTime``.
        """
        if self.realTime:
            if at is not None:
                raise ConfigurationError("A real-time channel takes no virtual send time")
            at = self.now()
        elif at is None:
            at = self.clock.now()
        data = bytes(data)
        with self._condition:
            if self._closed:
                raise RuntimeError("Send on a closed channel")
            enqueueTime = at
            if len(self._departures) == self.maxQueueDepth:
                enqueueTime = max(at, self._departures[0])
            slot = self._bucket.schedule(len(data), enqueueTime)
            item = Struct(data=data, time=slot.depart + self.latency)
            self._departures.append(slot.depart)
            self._inFlight.append(item)
            if not self.realTime:
                self._arrivals.append(Struct(time=item.time, nBytes=len(data)))
            self.stats.recordSent(data, slot.start, slot.depart)
            self._condition.notify_all()
        if self.realTime:
            delay = enqueueTime - self.now()
            if delay > 0:
                time.sleep(delay)
        return Struct(enqueueTime=enqueueTime, startTime=slot.start, departTime=slot.depart,
                      deliveryTime=item.time)

    def recv(self, timeout=None):
        """Return the next frame.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            Result struct with components ``data`` (`bytes`) and ``time``,
            the arrival time.

        Raises
        ------
        SessionClosedError
            Raised when the channel is closed and empty.
        """
        with self._condition:
            while not self._inFlight:
                if self._closed:
                    raise SessionClosedError("Channel closed")
                if not self.realTime:
                    raise RuntimeError("No frame in flight; in virtual time the sender must run first")
                if not self._condition.wait(timeout):
                    raise TimeoutError("No frame within %s s" % (timeout,))
            item = self._inFlight.popleft()
        if self.realTime:
            delay = item.time - self.now()
            if delay > 0:
                time.sleep(delay)
        self.stats.recordReceived(item.data)
        return item

    def close(self):
        """Mark the end of the stream; queued frames remain receivable."""
        with self._condition:
            self._closed = True
            self._condition.notify_all()


def parseAddress(address):
    """Split ``"host:port"`` into ``(host, port)``."""
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError("Address must look like host:port; got %r" % (address,))
    return host or "localhost", int(port)


class TcpListener:
    """Listening socket accepting one client at a time.

    Parameters
    ----------
    host : `str`
        Interface to bind.
    port : `int`
        Port; 0 picks a free one.
    maxQueueDepth : `int`, optional
        Send queue depth of accepted transports.
    """

    def __init__(self, host, port, maxQueueDepth=64):
        self._socket = socket.create_server((host, port))
        self.maxQueueDepth = maxQueueDepth

    @property
    def address(self):
        return self._socket.getsockname()[:2]

    def accept(self, timeout=None):
        self._socket.settimeout(timeout)
        connection, peer = self._socket.accept()
        connection.settimeout(None)
        _LOG.info("Accepted connection from %s:%d", *peer[:2])
        return TcpTransport(connection, maxQueueDepth=self.maxQueueDepth)

    def close(self):
        self._socket.close()


class TcpTransport:
    """Frame transport over one TCP connection.

    Sends are queued and written by a background thread so the producer
    keeps computing while data goes out; a full queue blocks the producer.

    Parameters
    ----------
    connection : `socket.socket`
        Connected socket; the transport takes ownership.
    maxQueueDepth : `int`, optional
        Frames that may wait for the writer.
    """
    isVirtual = False

    def __init__(self, connection, maxQueueDepth=64):
        self._socket = connection
        self._socket.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._queue = queue.Queue(maxsize=maxQueueDepth)
        self._start = time.monotonic()
        self._writeError = None
        self._closed = False
        self.stats = TransportStats()
        self._writer = threading.Thread(target=self._writeLoop, name="TcpTransportWriter", daemon=True)
        self._writer.start()

    @classmethod
    def connect(cls, host, port, timeout=None, maxQueueDepth=64):
        connection = socket.create_connection((host, port), timeout=timeout)
        connection.settimeout(None)
        return cls(connection, maxQueueDepth=maxQueueDepth)

    def now(self):
        return time.monotonic() - self._start

    def _writeLoop(self):
        while True:
            data = self._queue.get()
            if data is None:
                break
            first = self.now()
            try:
                self._socket.sendall(data)
            except OSError as e:
                self._writeError = e
                nDropped = self._discardQueued()
                _LOG.warning("Write failed: %s; dropped %d queued frames", e, nDropped)
                break
            self.stats.recordSent(data, first, self.now())

    def _discardQueued(self):
        """Empty the send queue, unblocking a producer waiting for room."""
        nDropped = 0
        while True:
            try:
                data = self._queue.get_nowait()
            except queue.Empty:
                return nDropped
            if data is not None:
                nDropped += 1

    def send(self, data, at=None):
        """Queue a frame for the writer thread.

        Raises
        ------
        ConfigurationError
            Raised if a virtual send time is given.
        SessionClosedError
            Raised if an earlier write failed.
        """
        if at is not None:
            raise ConfigurationError("A TCP transport runs in real time")
        if self._writeError is not None:
            raise SessionClosedError("Write failed: %s" % (self._writeError,))
        enqueueTime = self.now()
        self._queue.put(bytes(data))
        return Struct(enqueueTime=enqueueTime)

    def _readExactly(self, nBytes):
        chunks = bytearray()
        while len(chunks) < nBytes:
            chunk = self._socket.recv(nBytes - len(chunks))
            if not chunk:
                break
            chunks.extend(chunk)
        return bytes(chunks)

    def recv(self):
        """Read the next frame.

        Raises
        ------
        SessionClosedError
            Raised if the peer closed the stream between frames.
        ProtocolError
            Raised if the stream ends inside a frame.
        """
        header = self._readExactly(HEADER_SIZE)
        if not header:
            raise SessionClosedError("Peer closed the connection")
        if len(header) < HEADER_SIZE:
            raise ProtocolError("Stream ended inside a frame header")
        remaining = frameLength(header) - HEADER_SIZE
        payload = self._readExactly(remaining)
        if len(payload) < remaining:
            raise ProtocolError("Stream ended inside a frame: %d of %d payload bytes" %
                                (len(payload), remaining))
        frame = header + payload
        self.stats.recordReceived(frame)
        return Struct(data=frame, time=self.now())

    def close(self, timeout=None):
        """Flush queued frames and close the connection.

        Parameters
        ----------
        timeout : `float`, optional
            Seconds to wait for the queued frames to go out; the
            connection is then shut down and unsent frames are dropped.
            Waits for the writer if `None`.
        """
        if self._closed:
            return
        self._closed = True
        deadline = None if timeout is None else time.monotonic() + timeout
        while self._writer.is_alive():
            try:
                self._queue.put(None, timeout=_CLOSE_POLL_INTERVAL)
                break
            except queue.Full:
                if deadline is not None and time.monotonic() >= deadline:
                    break
        self._writer.join(None if deadline is None else max(0.0, deadline - time.monotonic()))
        if self._writer.is_alive():
            _LOG.warning("Queued frames not sent within %gs; closing the connection", timeout)
        try:
            self._socket.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        # The shutdown fails a blocked write, so the writer exits.
        self._writer.join()
        self._socket.close()
