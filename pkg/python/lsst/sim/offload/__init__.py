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

from .exceptions import *
from .grid import *
from .heatSolvers import *
from .quality import *
from .ensembleKalmanFilter import *
from .protocol import *
from .transport import *
from .costModel import *
from .trackers import *
from .syntheticUpdates import *
from .offloadServer import *
from .offloadClient import *
from .offloadPair import *
from .bench import *
from .version import *
