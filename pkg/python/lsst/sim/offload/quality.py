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

__all__ = ["QualityConfig", "QualitySpec", "ViolationReport", "computeNorm", "stepQuality",
           "chainQuality", "countViolationPoints", "selectViolationPoints"]

import numpy as np

import lsst.pex.config as pexConfig
from lsst.utils.logging import getLogger

from .exceptions import DimensionError
from .grid import StateVector

_LOG = getLogger(__name__)

NORMS = ("max", "euclidean")


class QualityConfig(pexConfig.Config):
    """Quality constraint on the approximate solution.
    """
    norm = pexConfig.ChoiceField(
        doc="Norm of the per-step difference between approximate and restricted reference state.",
        dtype=str,
        default="max",
        allowed={
            "max": "Maximum absolute difference over all points.",
            "euclidean": "Unnormalized 2-norm of the difference vector.",
        },
    )
    qMax = pexConfig.RangeField(
        doc="Largest per-step quality value the client may publish.",
        dtype=float,
        default=2.0**-7,
        min=0.0,
    )

    def makeSpec(self):
        return QualitySpec(norm=self.norm, qMax=self.qMax)


class QualitySpec:
    """A norm together with the bound it must satisfy.

    Parameters
    ----------
    norm : `str`
        ``"max"`` or ``"euclidean"``.
    qMax : `float`
        Bound on the per-step quality, non-negative; ``inf`` certifies
        everything.
    """

    def __init__(self, norm="max", qMax=2.0**-7):
        if norm not in NORMS:
            raise ValueError("Unknown norm %r; expected one of %s" % (norm, NORMS))
        if not qMax >= 0:
            raise ValueError("qMax must be non-negative; got %r" % (qMax,))
        self.norm = norm
        self.qMax = float(qMax)

    def __repr__(self):
        return "QualitySpec(norm=%r, qMax=%r)" % (self.norm, self.qMax)


def computeNorm(diff, norm):
    """Return the norm of a difference vector.

    Parameters
    ----------
    diff : array-like
        Difference vector.
    norm : `str`
        ``"max"`` or ``"euclidean"``.

    Returns
    -------
    value : `float`
        The norm; 0 for an empty vector.
    """
    diff = np.asarray(diff, dtype=np.float64)
    if diff.size == 0:
        return 0.0
    if norm == "max":
        return float(np.max(np.abs(diff)))
    if norm == "euclidean":
        return float(np.sqrt(np.dot(diff, diff)))
    raise ValueError("Unknown norm %r" % (norm,))


def _restrictedReference(approx, reference, restriction):
    if restriction is None:
        restricted = reference
    else:
        restricted = restriction.apply(reference)
    if restricted.grid != approx.grid:
        raise DimensionError("Approximate state on %r cannot be compared with reference restricted to %r" %
                             (approx.grid, restricted.grid))
    return restricted


def stepQuality(approx, reference, spec, restriction=None):
    """Quality of one time step: the norm of the difference between the
    approximate state and the restricted reference state.

    Parameters
    ----------
    approx : `lsst.sim.offload.StateVector`
        Approximate (client) state on the surrogate grid.
    reference : `lsst.sim.offload.StateVector`
        Reference state.
    spec : `QualitySpec`
        Norm to use.
    restriction : `lsst.sim.offload.Restriction`, optional
        Maps ``reference`` onto the grid of ``approx``; `None` if
        ``reference`` is already on that grid.

    Returns
    -------
    quality : `float`
        Per-step quality value.

    Raises
    ------
    DimensionError
        Raised if the grids do not line up.
    """
    restricted = _restrictedReference(approx, reference, restriction)
    return computeNorm(approx.values - restricted.values, spec.norm)


def chainQuality(approxChain, referenceChain, spec, restriction=None):
    """Overall quality of an approximate solution: the largest per-step
    quality over the chain.

    Raises
    ------
    DimensionError
        Raised if the chains differ in length.
    """
    if len(approxChain) != len(referenceChain):
        raise DimensionError("Chains differ in length: %d vs %d" % (len(approxChain), len(referenceChain)))
    quality = 0.0
    for approx, reference in zip(approxChain, referenceChain):
        quality = max(quality, stepQuality(approx, reference, spec, restriction))
    return quality


def countViolationPoints(approx, reference, spec, restriction=None):
    """Count the points that violate the quality constraint.

    These are the points a client would have to replace by their reference
    values, without any analysis, to satisfy the bound: for the maximum
    norm every point whose error exceeds ``qMax``, for the Euclidean norm
    the fewest largest errors whose removal brings the norm within
    ``qMax``.

    Parameters
    ----------
    approx : `lsst.sim.offload.StateVector`
        Approximate state on the surrogate grid.
    reference : `lsst.sim.offload.StateVector`
        Reference state.
    spec : `QualitySpec`
        Quality constraint.
    restriction : `lsst.sim.offload.Restriction`, optional
        Maps ``reference`` onto the grid of ``approx``.

    Returns
    -------
    count : `int`
        Number of violation points; 0 if the step satisfies the bound.
    """
    restricted = _restrictedReference(approx, reference, restriction)
    absDiff = np.abs(approx.values - restricted.values)
    if spec.norm == "max":
        return int(np.count_nonzero(absDiff > spec.qMax))
    squares = np.sort(absDiff**2)
    # remaining[k] is the squared norm left after removing the k largest errors.
    remaining = np.concatenate([np.cumsum(squares)[::-1], [0.0]])
    return int(np.argmax(np.sqrt(remaining) <= spec.qMax))


class ViolationReport:
    """Outcome of checking one step against the quality constraint.

    Parameters
    ----------
    step : `int`
        Time step index.
    quality : `float`
        Quality of the unmodified approximate state.
    violating : `bool`
        `True` if ``quality`` exceeds the bound.
    indices : `numpy.ndarray`, optional
        Selected points, strictly increasing.
    values : `numpy.ndarray`, optional
        Reference values at ``indices``.
    feasible : `bool`, optional
        `False` if no selection within the allowed size satisfies the bound.
    analysis : `object`, optional
        Result of the analysis callback for the accepted selection.
    analyzedQuality : `float`, optional
        Quality of the published state after the analysis.
    """

    def __init__(self, step, quality, violating, indices=None, values=None, feasible=True,
                 analysis=None, analyzedQuality=None):
        self.step = step
        self.quality = quality
        self.violating = violating
        self.indices = np.zeros(0, dtype=np.int64) if indices is None else indices
        self.values = np.zeros(0) if values is None else values
        self.feasible = feasible
        self.analysis = analysis
        self.analyzedQuality = quality if analyzedQuality is None else analyzedQuality

    @property
    def points(self):
        """Selected points as a `list` of ``(index, value)`` pairs."""
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def __len__(self):
        return len(self.indices)

    def __repr__(self):
        return ("ViolationReport(step=%r, quality=%g, violating=%r, nPoints=%d, feasible=%r)" %
                (self.step, self.quality, self.violating, len(self.indices), self.feasible))


def _publishedState(result):
    """State a client would publish for an analysis result."""
    if isinstance(result, StateVector):
        return result
    return result.mean()


def selectViolationPoints(mobileState, reference, spec, restriction, analyze, step=None, screen=None,
                          linearSearchLimit=64, maxSelectionFraction=1.0, maxConfirmations=4):
    """Select the points a partial update must carry so that the analyzed
    client state satisfies the quality constraint.

    Points are ranked by absolute error against the restricted reference,
    largest first, lowest index first among equal errors.  The selection is
    the shortest prefix of that ranking whose analysis passes; for the
    maximum norm the prefix starts with every point exceeding ``qMax``.

    Parameters
    ----------
    mobileState : `lsst.sim.offload.Ensemble` or `lsst.sim.offload.StateVector`
        Tracked client state before the update; for an ensemble its mean
        is the published state.
    reference : `lsst.sim.offload.StateVector`
        Reference state.
    spec : `QualitySpec`
        Quality constraint.
    restriction : `lsst.sim.offload.Restriction` or `None`
        Maps ``reference`` onto the surrogate grid.
    analyze : callable
        ``analyze(indices, values)`` returns the analyzed
        `~lsst.sim.offload.Ensemble` (or `~lsst.sim.offload.StateVector`)
        for a candidate selection.  Must not modify shared state.
    step : `int`, optional
        Step index recorded in the report.
    screen : callable, optional
        Cheap ``screen(indices, values) -> StateVector`` estimate of the
        analyzed state used to search prefix sizes; accepted selections are
        always confirmed with ``analyze``.
    linearSearchLimit : `int`, optional
        Number of prefix sizes tried one by one before galloping.
    maxSelectionFraction : `float`, optional
        Largest selection, as a fraction of the surrogate points.
    maxConfirmations : `int`, optional
        Number of ``analyze`` confirmations tried after the search before
        giving up.

    Returns
    -------
    report : `ViolationReport`
        The selection.  ``report.feasible`` is `False` if no selection
        within the allowed size satisfies the constraint.
    """
    approx = _publishedState(mobileState)
    if step is None:
        step = getattr(mobileState, "step", None)
    restricted = _restrictedReference(approx, reference, restriction)
    diff = approx.values - restricted.values
    quality = computeNorm(diff, spec.norm)
    if quality <= spec.qMax:
        return ViolationReport(step, quality, False)

    absDiff = np.abs(diff)
    order = np.argsort(-absDiff, kind="stable")
    nPoints = len(order)
    cap = min(nPoints, max(1, int(round(maxSelectionFraction*nPoints))))
    if spec.norm == "max":
        start = int(np.count_nonzero(absDiff > spec.qMax))
    else:
        start = 1

    def selection(size):
        indices = np.sort(order[:size])
        return indices, restricted.values[indices]

    def analyzedQuality(result):
        return computeNorm(_publishedState(result).values - restricted.values, spec.norm)

    def confirm(size):
        indices, values = selection(size)
        result = analyze(indices, values)
        postQuality = analyzedQuality(result)
        if postQuality <= spec.qMax:
            return ViolationReport(step, quality, True, indices, values, True, result, postQuality)
        return None

    def passes(size):
        if screen is None:
            return confirm(size)
        indices, values = selection(size)
        if analyzedQuality(screen(indices, values)) > spec.qMax:
            return None
        return confirm(size)

    if start > cap:
        _LOG.debug("Step %s: %d points exceed qMax, more than the %d allowed", step, start, cap)
        return ViolationReport(step, quality, True, *selection(cap), feasible=False)

    linearEnd = min(cap, start + linearSearchLimit - 1)
    for size in range(start, linearEnd + 1):
        report = passes(size)
        if report is not None:
            return report
    if linearEnd == cap:
        return ViolationReport(step, quality, True, *selection(cap), feasible=False)

    # Gallop on the cheap predicate, then bisect for the shortest passing prefix.
    if screen is None:
        def predicate(size):
            return confirm(size) is not None
    else:
        def predicate(size):
            return analyzedQuality(screen(*selection(size))) <= spec.qMax

    failing, stride, found = linearEnd, 1, None
    while found is None:
        size = min(cap, failing + stride)
        if predicate(size):
            found = size
        elif size == cap:
            return ViolationReport(step, quality, True, *selection(cap), feasible=False)
        else:
            failing, stride = size, 2*stride
    while found - failing > 1:
        middle = (failing + found)//2
        if predicate(middle):
            found = middle
        else:
            failing = middle

    size = found
    for _ in range(maxConfirmations):
        report = confirm(size)
        if report is not None:
            return report
        if size == cap:
            break
        size = min(cap, size + max(1, size//8))
    _LOG.debug("Step %s: no verified selection up to %d points", step, size)
    return ViolationReport(step, quality, True, *selection(size), feasible=False)
