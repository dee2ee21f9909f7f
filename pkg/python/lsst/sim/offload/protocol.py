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

"""Binary wire format of the messages a server sends to a client.

Every message travels in a frame ``[type: u8][length: u32][payload]``.  All
integers are little-endian, all reals IEEE-754 binary64 little-endian.
Arrays carry no element count; it follows from the frame length.
"""

__all__ = ["Strategy", "NORM_CODES", "HEADER_SIZE", "INIT_FIXED_SIZE", "MessageType", "Message",
           "InitMessage", "CertifyMessage", "FullUpdateMessage", "PartialUpdateMessage",
           "StreamStateMessage", "encode", "decode", "decodeFrame", "frameLength", "messageSize",
           "FrameDecoder"]

import enum
import struct

import numpy as np

from .exceptions import IncompleteFrameError, ProtocolError


class Strategy(enum.IntEnum):
    """Offloading strategy; the value is its wire code."""
    SIMPLE_STREAM = 0
    ADVANCED_STREAM = 1
    FULL_UPDATE = 2
    PARTIAL_UPDATE = 3
    COMBINED = 4

    @classmethod
    def fromName(cls, name):
        """Look up a strategy by its configuration name, e.g.
        ``"partialUpdate"``.
        """
        for member in cls:
            if member.configName == name:
                return member
        raise ValueError("Unknown strategy %r" % (name,))

    @property
    def configName(self):
        first, *rest = self.name.lower().split("_")
        return first + "".join(word.capitalize() for word in rest)

    @property
    def isStream(self):
        return self in (Strategy.SIMPLE_STREAM, Strategy.ADVANCED_STREAM)

    @property
    def usesEnsemble(self):
        return self in (Strategy.PARTIAL_UPDATE, Strategy.COMBINED)


NORM_CODES = {"max": 0, "euclidean": 1}


class MessageType(enum.IntEnum):
    INIT = 0
    CERTIFY = 1
    FULL_UPDATE = 2
    PARTIAL_UPDATE = 3
    STREAM_STATE = 4


_HEADER = struct.Struct("<BI")
_STEP = struct.Struct("<I")
_PARTIAL_HEADER = struct.Struct("<II")
_INIT = struct.Struct("<BBIddddBHQB")
_F64 = np.dtype("<f8")
_PAIR = np.dtype([("index", "<u4"), ("value", "<f8")])

HEADER_SIZE = _HEADER.size
INIT_FIXED_SIZE = _INIT.size
_U32_MAX = 2**32 - 1


def _packValues(values):
    return np.ascontiguousarray(values, dtype=_F64).tobytes()


def _unpackValues(payload, offset):
    if (len(payload) - offset) % _F64.itemsize:
        raise ProtocolError("Array payload of %d bytes is not a whole number of f64 values" %
                            (len(payload) - offset))
    values = np.frombuffer(payload, dtype=_F64, offset=offset).astype(np.float64)
    values.setflags(write=False)
    return values


def _checkStep(step):
    if not 0 <= step <= _U32_MAX:
        raise ProtocolError("Step %r does not fit in u32" % (step,))
    return int(step)


class Message:
    """Base class of all wire messages.

    Two messages are equal when they encode to the same bytes.
    """
    messageType = None

    def payloadSize(self):
        raise NotImplementedError()

    def encodePayload(self):
        raise NotImplementedError()

    @classmethod
    def decodePayload(cls, payload):
        raise NotImplementedError()

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        return self.messageType == other.messageType and self.encodePayload() == other.encodePayload()

    __hash__ = None


class InitMessage(Message):
    """Session handshake carrying the run parameters and the initial state.

    Parameters
    ----------
    surrogateLevel, referenceLevel : `int`
        Grid levels, u8.
    nSteps : `int`
        Number of steps after the initial state, u32.
    dt, alpha, qMax, sigma : `float`
        Problem, quality and perturbation parameters.
    norm : `str`
        ``"max"`` or ``"euclidean"``.
    nMembers : `int`
        Ensemble size, u16.
    basicSeed : `int`
        Basic seed of the member generation, u64.
    strategy : `Strategy`
        Strategy of the session.
    initialState : array-like
        Initial state values; reference grid for the simple stream,
        surrogate grid otherwise.
    """
    messageType = MessageType.INIT

    def __init__(self, surrogateLevel, referenceLevel, nSteps, dt, alpha, qMax, sigma, norm, nMembers,
                 basicSeed, strategy, initialState):
        self.surrogateLevel = int(surrogateLevel)
        self.referenceLevel = int(referenceLevel)
        self.nSteps = int(nSteps)
        self.dt = float(dt)
        self.alpha = float(alpha)
        self.qMax = float(qMax)
        self.sigma = float(sigma)
        self.norm = norm
        self.nMembers = int(nMembers)
        self.basicSeed = int(basicSeed)
        self.strategy = Strategy(strategy)
        self.initialState = np.asarray(initialState, dtype=np.float64)

    def payloadSize(self):
        return INIT_FIXED_SIZE + _F64.itemsize*len(self.initialState)

    def encodePayload(self):
        if self.norm not in NORM_CODES:
            raise ProtocolError("Unknown norm %r" % (self.norm,))
        try:
            fixed = _INIT.pack(self.surrogateLevel, self.referenceLevel, self.nSteps, self.dt, self.alpha,
                               self.qMax, self.sigma, NORM_CODES[self.norm], self.nMembers, self.basicSeed,
                               int(self.strategy))
        except struct.error as e:
            raise ProtocolError("Init field out of range: %s" % (e,)) from e
        return fixed + _packValues(self.initialState)

    @classmethod
    def decodePayload(cls, payload):
        if len(payload) < INIT_FIXED_SIZE:
            raise ProtocolError("Init payload of %d bytes is shorter than %d"
                                % (len(payload), INIT_FIXED_SIZE))
        (surrogateLevel, referenceLevel, nSteps, dt, alpha, qMax, sigma, normCode, nMembers, basicSeed,
         strategyCode) = _INIT.unpack_from(payload)
        norms = {code: name for name, code in NORM_CODES.items()}
        if normCode not in norms:
            raise ProtocolError("Unknown norm code %d" % normCode)
        try:
            strategy = Strategy(strategyCode)
        except ValueError as e:
            raise ProtocolError("Unknown strategy code %d" % strategyCode) from e
        if referenceLevel < surrogateLevel:
            raise ProtocolError("Reference level %d is coarser than surrogate level %d" %
                                (referenceLevel, surrogateLevel))
        return cls(surrogateLevel, referenceLevel, nSteps, dt, alpha, qMax, sigma, norms[normCode],
                   nMembers, basicSeed, strategy, _unpackValues(payload, INIT_FIXED_SIZE))

    def __repr__(self):
        return ("InitMessage(levels=%d/%d, nSteps=%d, strategy=%s, nValues=%d)" %
                (self.surrogateLevel, self.referenceLevel, self.nSteps, self.strategy.configName,
                 len(self.initialState)))


class CertifyMessage(Message):
    """The client's own result for ``step`` satisfies the quality bound."""
    messageType = MessageType.CERTIFY

    def __init__(self, step):
        self.step = _checkStep(step)

    def payloadSize(self):
        return _STEP.size

    def encodePayload(self):
        return _STEP.pack(self.step)

    @classmethod
    def decodePayload(cls, payload):
        if len(payload) != _STEP.size:
            raise ProtocolError("Certify payload must be %d bytes; got %d" % (_STEP.size, len(payload)))
        return cls(*_STEP.unpack(payload))

    def __repr__(self):
        return "CertifyMessage(step=%d)" % self.step


class _StateMessage(Message):
    """A step number followed by a full state vector."""

    def __init__(self, step, state):
        self.step = _checkStep(step)
        self.state = np.asarray(state, dtype=np.float64)
        if self.state.ndim != 1:
            raise ProtocolError("State must be one-dimensional; got shape %s" % (self.state.shape,))

    def payloadSize(self):
        return _STEP.size + _F64.itemsize*len(self.state)

    def encodePayload(self):
        return _STEP.pack(self.step) + _packValues(self.state)

    @classmethod
    def decodePayload(cls, payload):
        if len(payload) < _STEP.size:
            raise ProtocolError("%s payload shorter than its step field" % cls.__name__)
        step, = _STEP.unpack_from(payload)
        return cls(step, _unpackValues(payload, _STEP.size))

    def __repr__(self):
        return "%s(step=%d, nValues=%d)" % (type(self).__name__, self.step, len(self.state))


class FullUpdateMessage(_StateMessage):
    """Replace the client state with ``state`` (surrogate grid)."""
    messageType = MessageType.FULL_UPDATE


class StreamStateMessage(_StateMessage):
    """A streamed state, on the reference or surrogate grid."""
    messageType = MessageType.STREAM_STATE


class PartialUpdateMessage(Message):
    """Exact values at a strictly increasing set of surrogate points.

    Parameters
    ----------
    step : `int`
        Step index.
    indices : array-like of `int`
        Point indices, strictly increasing, at least one.
    values : array-like of `float`
        Values at ``indices``.
    """
    messageType = MessageType.PARTIAL_UPDATE

    def __init__(self, step, indices, values):
        self.step = _checkStep(step)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.indices.ndim != 1 or self.indices.shape != self.values.shape:
            raise ProtocolError("Partial update needs matching 1-d indices and values")
        if len(self.indices) == 0:
            raise ProtocolError("Partial update needs at least one point")
        if np.any(np.diff(self.indices) <= 0):
            raise ProtocolError("Partial update indices must be strictly increasing")
        if self.indices[0] < 0 or self.indices[-1] > _U32_MAX:
            raise ProtocolError("Partial update index does not fit in u32")

    @property
    def count(self):
        return len(self.indices)

    def payloadSize(self):
        return _PARTIAL_HEADER.size + _PAIR.itemsize*self.count

    def encodePayload(self):
        pairs = np.empty(self.count, dtype=_PAIR)
        pairs["index"] = self.indices
        pairs["value"] = self.values
        return _PARTIAL_HEADER.pack(self.step, self.count) + pairs.tobytes()

    @classmethod
    def decodePayload(cls, payload):
        if len(payload) < _PARTIAL_HEADER.size:
            raise ProtocolError("Partial update payload shorter than its header")
        step, count = _PARTIAL_HEADER.unpack_from(payload)
        if len(payload) != _PARTIAL_HEADER.size + _PAIR.itemsize*count:
            raise ProtocolError("Partial update declares %d pairs but carries %d payload bytes" %
                                (count, len(payload)))
        pairs = np.frombuffer(payload, dtype=_PAIR, offset=_PARTIAL_HEADER.size)
        return cls(step, pairs["index"].astype(np.int64), pairs["value"].astype(np.float64))

    def __repr__(self):
        return "PartialUpdateMessage(step=%d, count=%d)" % (self.step, self.count)


_MESSAGE_CLASSES = {cls.messageType: cls for cls in (InitMessage, CertifyMessage, FullUpdateMessage,
                                                     PartialUpdateMessage, StreamStateMessage)}


def messageSize(message):
    """Return the exact encoded size of ``message`` in bytes, header
    included, without encoding it.
    """
    return HEADER_SIZE + message.payloadSize()


def encode(message):
    """Encode a message into one frame.

    Raises
    ------
    ProtocolError
        Raised if a field violates the message invariants.
    """
    payload = message.encodePayload()
    if len(payload) > _U32_MAX:
        raise ProtocolError("Payload of %d bytes exceeds the frame limit" % len(payload))
    return _HEADER.pack(int(message.messageType), len(payload)) + payload


def frameLength(buffer, offset=0):
    """Return the total length of the frame starting at ``offset``.

    Raises
    ------
    IncompleteFrameError
        Raised if the header is not complete yet.
    """
    available = len(buffer) - offset
    if available < HEADER_SIZE:
        raise IncompleteFrameError(HEADER_SIZE, available)
    _, length = _HEADER.unpack_from(buffer, offset)
    return HEADER_SIZE + length


def decodeFrame(buffer, offset=0):
    """Decode the frame starting at ``offset`` of ``buffer``.

    Returns
    -------
    message : `Message`
        Decoded message.
    size : `int`
        Number of bytes consumed.

    Raises
    ------
    IncompleteFrameError
        Raised if ``buffer`` ends before the frame does.
    ProtocolError
        Raised for an unknown type or a malformed payload.
    """
    size = frameLength(buffer, offset)
    available = len(buffer) - offset
    if available < size:
        raise IncompleteFrameError(size, available)
    typeCode = buffer[offset]
    try:
        cls = _MESSAGE_CLASSES[MessageType(typeCode)]
    except ValueError as e:
        raise ProtocolError("Unknown message type %d" % typeCode) from e
    payload = bytes(buffer[offset + HEADER_SIZE:offset + size])
    return cls.decodePayload(payload), size


def decode(data):
    """Decode exactly one frame.

    Raises
    ------
    IncompleteFrameError
        Raised if ``data`` holds less than one frame.
    ProtocolError
        Raised for trailing bytes, an unknown type or a malformed payload.
    """
    message, size = decodeFrame(data)
    if size != len(data):
        raise ProtocolError("%d bytes follow the frame" % (len(data) - size))
    return message


class FrameDecoder:
    """Split a byte stream into messages.
    """

    def __init__(self):
        self._buffer = bytearray()

    def feed(self, data):
        """Append received bytes and return every message completed by them.
        """
        self._buffer.extend(data)
        messages = []
        offset = 0
        while True:
            try:
                message, size = decodeFrame(self._buffer, offset)
            except IncompleteFrameError:
                break
            messages.append(message)
            offset += size
        del self._buffer[:offset]
        return messages

    @property
    def pending(self):
        """Number of buffered bytes not yet forming a frame."""
        return len(self._buffer)
