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

import struct
import unittest

import numpy as np

import lsst.utils.tests
from lsst.sim.offload import (CertifyMessage, FrameDecoder, FullUpdateMessage, HEADER_SIZE,
                              INIT_FIXED_SIZE, IncompleteFrameError, InitMessage, MessageType,
                              PartialUpdateMessage, ProtocolError, StreamStateMessage, Strategy, decode,
                              decodeFrame, encode, frameLength, makeGrid, messageSize)


def makeInit(strategy=Strategy.PARTIAL_UPDATE, nValues=9):
    return InitMessage(surrogateLevel=1, referenceLevel=2, nSteps=100, dt=1e-4, alpha=1.0, qMax=2.0**-7,
                       sigma=2.0**-8, norm="max", nMembers=50, basicSeed=2**63 + 5, strategy=strategy,
                       initialState=np.linspace(0.0, 1.0, nValues))


class MessageSizeTestCase(lsst.utils.tests.TestCase):

    def testCertify(self):
        frame = encode(CertifyMessage(7))
        self.assertEqual(len(frame), 9)
        self.assertEqual(frame, bytes([1, 4, 0, 0, 0, 7, 0, 0, 0]))

    def testFullUpdate(self):
        grid = makeGrid(5)
        message = FullUpdateMessage(3, np.zeros(grid.nPoints))
        self.assertEqual(message.payloadSize(), 8716)
        self.assertEqual(messageSize(message), 8716 + HEADER_SIZE)
        self.assertEqual(len(encode(message)), messageSize(message))

    def testPartialUpdate(self):
        grid = makeGrid(5)
        indices = np.arange(0, 54*20, 20)
        message = PartialUpdateMessage(3, indices, np.ones(54))
        self.assertEqual(message.payloadSize(), 656)
        fullSize = FullUpdateMessage(3, np.zeros(grid.nPoints)).payloadSize()
        self.assertLess(message.payloadSize(), 0.08*fullSize)
        frame = encode(message)
        self.assertEqual(len(frame), 661)
        self.assertEqual(struct.unpack_from("<II", frame, HEADER_SIZE), (3, 54))
        self.assertEqual(struct.unpack_from("<Id", frame, HEADER_SIZE + 8 + 12), (20, 1.0))

    def testInit(self):
        message = makeInit(nValues=25)
        self.assertEqual(INIT_FIXED_SIZE, 50)
        self.assertEqual(messageSize(message), HEADER_SIZE + 50 + 25*8)
        self.assertEqual(len(encode(message)), messageSize(message))

    def testFullPartialCrossover(self):
        # Partial updates of all points cost more than a full update.
        grid = makeGrid(5)
        full = FullUpdateMessage(1, np.zeros(grid.nPoints))
        partial = PartialUpdateMessage(1, np.arange(grid.nPoints), np.zeros(grid.nPoints))
        self.assertGreater(messageSize(partial), messageSize(full))


class RoundTripTestCase(lsst.utils.tests.TestCase):

    def testEachType(self):
        messages = [
            makeInit(),
            makeInit(Strategy.SIMPLE_STREAM, nValues=25),
            CertifyMessage(0),
            CertifyMessage(2**32 - 1),
            FullUpdateMessage(5, [0.0, -1.5, np.pi]),
            PartialUpdateMessage(6, [0, 3, 2**32 - 1], [1.0, -0.0, 1e-300]),
            StreamStateMessage(7, np.arange(9.0)),
        ]
        for message in messages:
            with self.subTest(message=message):
                decoded = decode(encode(message))
                self.assertIs(type(decoded), type(message))
                self.assertEqual(decoded, message)
                self.assertEqual(encode(decoded), encode(message))

    def testInitFields(self):
        decoded = decode(encode(makeInit()))
        self.assertEqual(decoded.strategy, Strategy.PARTIAL_UPDATE)
        self.assertEqual(decoded.basicSeed, 2**63 + 5)
        self.assertEqual(decoded.norm, "max")
        self.assertEqual(decoded.qMax, 2.0**-7)
        self.assertFloatsEqual(decoded.initialState, np.linspace(0.0, 1.0, 9))

    def randomMessage(self, rng):
        kind = int(rng.integers(5))
        step = int(rng.integers(0, 2**32))
        n = int(rng.integers(1, 50))
        if kind == 0:
            surrogateLevel = int(rng.integers(1, 13))
            return InitMessage(surrogateLevel=surrogateLevel,
                               referenceLevel=int(rng.integers(surrogateLevel, 13)),
                               nSteps=int(rng.integers(0, 2**32)), dt=float(rng.uniform(1e-6, 1.0)),
                               alpha=float(rng.uniform(1e-3, 10.0)), qMax=float(2.0**-rng.integers(1, 20)),
                               sigma=float(rng.uniform(0.0, 1.0)), norm=str(rng.choice(["max", "euclidean"])),
                               nMembers=int(rng.integers(2, 2**16)),
                               basicSeed=int(rng.integers(0, 2**63))*2 + 1,
                               strategy=Strategy(int(rng.integers(5))), initialState=rng.normal(size=n))
        if kind == 1:
            return CertifyMessage(step)
        if kind == 2:
            return FullUpdateMessage(step, rng.normal(size=n))
        if kind == 3:
            return StreamStateMessage(step, rng.normal(size=n))
        indices = np.sort(rng.choice(2**20, size=n, replace=False))
        return PartialUpdateMessage(step, indices, rng.normal(size=n))

    def testRandomized(self):
        rng = np.random.Generator(np.random.MT19937(12))
        seen = set()
        for _ in range(10000):
            message = self.randomMessage(rng)
            frame = encode(message)
            self.assertEqual(len(frame), messageSize(message))
            decoded = decode(frame)
            self.assertIs(type(decoded), type(message))
            self.assertEqual(decoded, message)
            seen.add(message.messageType)
        self.assertEqual(seen, set(MessageType))

    def testDistinctTypes(self):
        state = np.arange(4.0)
        self.assertNotEqual(FullUpdateMessage(1, state), StreamStateMessage(1, state))


class DecodeErrorTestCase(lsst.utils.tests.TestCase):

    def testNeedMoreBytes(self):
        frame = encode(FullUpdateMessage(1, np.ones(10)))
        for cut in (0, 3, HEADER_SIZE, len(frame) - 1):
            with self.assertRaises(IncompleteFrameError) as context:
                decode(frame[:cut])
            self.assertGreater(context.exception.needed, context.exception.available)

    def testUnknownType(self):
        with self.assertRaises(ProtocolError):
            decode(bytes([9, 0, 0, 0, 0]))

    def testTrailingBytes(self):
        with self.assertRaises(ProtocolError):
            decode(encode(CertifyMessage(1)) + b"\x00")

    def testBadPayloads(self):
        with self.assertRaises(ProtocolError):
            decode(bytes([MessageType.CERTIFY, 3, 0, 0, 0, 1, 2, 3]))
        with self.assertRaises(ProtocolError):
            decode(bytes([MessageType.FULL_UPDATE, 7, 0, 0, 0]) + bytes(7))
        partial = bytearray(encode(PartialUpdateMessage(1, [1, 2], [0.5, 0.5])))
        struct.pack_into("<I", partial, HEADER_SIZE + 4, 3)
        with self.assertRaises(ProtocolError):
            decode(bytes(partial))
        struct.pack_into("<I", partial, HEADER_SIZE + 4, 2)
        struct.pack_into("<I", partial, HEADER_SIZE + 8, 5)
        with self.assertRaises(ProtocolError):
            decode(bytes(partial))

    def testInvalidMessages(self):
        with self.assertRaises(ProtocolError):
            PartialUpdateMessage(1, [], [])
        with self.assertRaises(ProtocolError):
            PartialUpdateMessage(1, [2, 1], [0.0, 0.0])
        with self.assertRaises(ProtocolError):
            PartialUpdateMessage(1, [1, 2], [0.0])
        with self.assertRaises(ProtocolError):
            CertifyMessage(-1)
        with self.assertRaises(ProtocolError):
            CertifyMessage(2**32)
        init = makeInit()
        init.norm = "l1"
        with self.assertRaises(ProtocolError):
            encode(init)

    def testBadInit(self):
        frame = bytearray(encode(makeInit()))
        frame[HEADER_SIZE + 49] = 9
        with self.assertRaises(ProtocolError):
            decode(bytes(frame))
        frame = bytearray(encode(makeInit()))
        frame[HEADER_SIZE] = 3
        with self.assertRaises(ProtocolError):
            decode(bytes(frame))


class FrameDecoderTestCase(lsst.utils.tests.TestCase):

    def testStream(self):
        messages = [CertifyMessage(1), FullUpdateMessage(2, np.ones(5)), PartialUpdateMessage(3, [4], [0.25])]
        stream = b"".join(encode(message) for message in messages)
        decoder = FrameDecoder()
        received = []
        for start in range(0, len(stream), 7):
            received.extend(decoder.feed(stream[start:start + 7]))
        self.assertEqual(received, messages)
        self.assertEqual(decoder.pending, 0)

    def testPartialFrame(self):
        frame = encode(FullUpdateMessage(2, np.ones(5)))
        decoder = FrameDecoder()
        self.assertEqual(decoder.feed(frame[:10]), [])
        self.assertEqual(decoder.pending, 10)
        self.assertEqual(frameLength(frame), len(frame))
        message, size = decodeFrame(frame + encode(CertifyMessage(3)))
        self.assertEqual(size, len(frame))
        self.assertEqual(decoder.feed(frame[10:]), [message])


class StrategyTestCase(lsst.utils.tests.TestCase):

    def testNames(self):
        self.assertEqual(Strategy.SIMPLE_STREAM.configName, "simpleStream")
        self.assertIs(Strategy.fromName("partialUpdate"), Strategy.PARTIAL_UPDATE)
        self.assertTrue(Strategy.ADVANCED_STREAM.isStream)
        self.assertFalse(Strategy.FULL_UPDATE.usesEnsemble)
        self.assertTrue(Strategy.COMBINED.usesEnsemble)
        with self.assertRaises(ValueError):
            Strategy.fromName("bogus")


class MemoryTester(lsst.utils.tests.MemoryTestCase):
    pass


def setup_module(module):
    lsst.utils.tests.init()


if __name__ == "__main__":
    lsst.utils.tests.init()
    unittest.main()
