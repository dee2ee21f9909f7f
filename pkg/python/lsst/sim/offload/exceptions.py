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

__all__ = ["ConfigurationError", "DimensionError", "ProtocolError", "IncompleteFrameError",
           "SessionClosedError"]


class ConfigurationError(ValueError):
    """Raised for parameters that make a run impossible, such as a grid
    level out of range or an unstable explicit time step.
    """
    pass


class DimensionError(ValueError):
    """Raised when states, grids or chains do not line up.
    """
    pass


class ProtocolError(RuntimeError):
    """Raised for a malformed or out-of-order wire message.

    A protocol error is fatal for the session that raised it.
    """
    pass


class IncompleteFrameError(ProtocolError):
    """Raised by the decoder when the buffer does not yet hold a complete
    frame.

    Parameters
    ----------
    needed : `int`
        Total number of bytes required before decoding can succeed, or the
        header size when the frame length is still unknown.
    available : `int`
        Number of bytes available.
    """

    def __init__(self, needed, available):
        ProtocolError.__init__(self, "Need %d bytes to decode frame, have %d" % (needed, available))
        self.needed = needed
        self.available = available


class SessionClosedError(EOFError):
    """Raised by a transport when the peer has closed the stream and no
    further frames are queued.
    """
    pass
