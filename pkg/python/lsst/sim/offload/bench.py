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

__all__ = ["ScenarioConfig", "BenchmarkTask", "ViolationStudyConfig", "ViolationStudyTask", "ROW_COLUMNS",
           "makeRowTable", "medianRows", "makeSummary", "emitCsv", "emitSummary"]

import copy
import math
import os

import numpy as np
from astropy.table import Table, vstack

import lsst.pex.config as pexConfig
import lsst.pipe.base as pipeBase
from lsst.utils.timer import timeMethod

from .exceptions import ConfigurationError, DimensionError, ProtocolError
from .offloadPair import OffloadPairConfig, OffloadPairTask
from .offloadServer import STRATEGY_NAMES

SWEEP_VARIABLES = ("qMax", "rate", "updateProbability", "updateSizeFraction", "surrogateLevel")

ROW_COLUMNS = (
    ("run_id", str),
    ("strategy", str),
    ("sweep_var", str),
    ("sweep_value", float),
    ("rep", str),
    ("total_latency_s", float),
    ("bytes_sent", float),
    ("n_certify", float),
    ("n_full", float),
    ("n_partial", float),
    ("mean_violation_fraction", float),
    ("Q_A", float),
    ("q_max", float),
    ("error", str),
)

_NUMERIC_COLUMNS = tuple(name for name, dtype in ROW_COLUMNS[5:] if dtype is float)

SUMMARY_COLUMNS = (
    ("sweep_var", str),
    ("sweep_value", float),
    ("strategy", str),
    ("n_runs", int),
    ("median_latency_s", float),
    ("median_bytes_sent", float),
    ("median_Q_A", float),
    ("speedup_vs_simple_stream", float),
)


class ScenarioConfig(pexConfig.Config):
    """A benchmark: one parameter swept over values for several strategies.
    """
    name = pexConfig.Field(
        doc="Scenario name, used in run identifiers and file names.",
        dtype=str,
        default="scenario",
    )
    pair = pexConfig.ConfigField(
        doc="Base configuration of every run.",
        dtype=OffloadPairConfig,
    )
    sweepVariable = pexConfig.ChoiceField(
        doc="Parameter varied by the scenario.",
        dtype=str,
        default="qMax",
        allowed={
            "qMax": "Quality bound (pair.server.quality.qMax).",
            "rate": "Channel data rate in bit/s (pair.channel.rate).",
            "updateProbability": "Forced update probability (pair.server.synthetic.probability).",
            "updateSizeFraction": "Forced update size (pair.server.synthetic.sizeFraction).",
            "surrogateLevel": "Surrogate grid level (pair.server.problem.surrogateLevel).",
        },
    )
    sweepValues = pexConfig.ListField(
        doc="Values of the swept parameter.",
        dtype=float,
        default=[2.0**-7],
    )
    strategies = pexConfig.ListField(
        doc="Strategies run for every value.",
        dtype=str,
        default=list(STRATEGY_NAMES),
    )
    repetitions = pexConfig.RangeField(
        doc="Runs per value and strategy; each repetition uses its own initial state and decision seed.",
        dtype=int,
        default=10,
        min=3,
    )
    seed = pexConfig.Field(
        doc="Seed of the first repetition; repetition r uses seed + r.",
        dtype=int,
        default=0,
    )

    def validate(self):
        pexConfig.Config.validate(self)
        if len(self.sweepValues) == 0:
            raise ValueError("sweepValues must not be empty")
        unknown = set(self.strategies) - set(STRATEGY_NAMES)
        if unknown:
            raise ValueError("Unknown strategies %s; expected some of %s" % (sorted(unknown), STRATEGY_NAMES))
        if len(self.strategies) == 0:
            raise ValueError("strategies must not be empty")


def applySweepValue(pairConfig, sweepVariable, value):
    """Set the swept parameter on a pair configuration."""
    if sweepVariable == "qMax":
        pairConfig.server.quality.qMax = value
    elif sweepVariable == "rate":
        pairConfig.channel.rate = value
    elif sweepVariable == "updateProbability":
        pairConfig.server.synthetic.probability = value
    elif sweepVariable == "updateSizeFraction":
        pairConfig.server.synthetic.sizeFraction = value
    elif sweepVariable == "surrogateLevel":
        if value != int(value):
            raise ConfigurationError("surrogateLevel must be an integer; got %r" % (value,))
        pairConfig.server.problem.surrogateLevel = int(value)
    else:
        raise ValueError("Unknown sweep variable %r" % (sweepVariable,))


def makeRowTable(rows=()):
    """Make a benchmark row table with the normative column order.

    Parameters
    ----------
    rows : iterable of `tuple`
        Rows in `ROW_COLUMNS` order.
    """
    names = [name for name, _ in ROW_COLUMNS]
    dtypes = [dtype for _, dtype in ROW_COLUMNS]
    rows = list(rows)
    if not rows:
        return Table(names=names, dtype=dtypes)
    return Table(rows=rows, names=names, dtype=dtypes)


def _median(values):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    return float(np.median(values)) if len(values) else math.nan


def _successful(rows):
    if len(rows) == 0:
        return rows
    return rows[(rows["rep"] != "median") & (rows["error"] == "")]


def medianRows(rows):
    """Median row per sweep value and strategy over successful runs.

    Parameters
    ----------
    rows : `astropy.table.Table`
        Per-run rows.

    Returns
    -------
    medians : `astropy.table.Table`
        Rows with ``rep`` set to ``"median"``.
    """
    runs = _successful(rows)
    medians = []
    if len(runs) == 0:
        return makeRowTable()
    for group in runs.group_by(["sweep_value", "strategy"]).groups:
        first = group[0]
        medians.append((
            "%s-median" % first["run_id"].rsplit("-rep", 1)[0],
            first["strategy"],
            first["sweep_var"],
            first["sweep_value"],
            "median",
            *[_median(group[name]) for name in _NUMERIC_COLUMNS],
            "",
        ))
    return makeRowTable(medians)


def makeSummary(rows):
    """Summarize runs per sweep value and strategy.

    The speedup of a strategy is the median latency of the simple stream
    divided by its own median latency, NaN if the simple stream was not
    run.

    Parameters
    ----------
    rows : `astropy.table.Table`
        Per-run rows.

    Returns
    -------
    summary : `astropy.table.Table`
        One row per sweep value and strategy, in `SUMMARY_COLUMNS` order.
    """
    names = [name for name, _ in SUMMARY_COLUMNS]
    dtypes = [dtype for _, dtype in SUMMARY_COLUMNS]
    runs = _successful(rows)
    if len(runs) == 0:
        return Table(names=names, dtype=dtypes)
    entries = []
    simple = {}
    for group in runs.group_by(["sweep_value", "strategy"]).groups:
        first = group[0]
        latency = _median(group["total_latency_s"])
        entries.append([first["sweep_var"], first["sweep_value"], first["strategy"], len(group), latency,
                        _median(group["bytes_sent"]), _median(group["Q_A"])])
        if first["strategy"] == "simpleStream":
            simple[first["sweep_value"]] = latency
    for entry in entries:
        baseline = simple.get(entry[1], math.nan)
        entry.append(baseline/entry[4] if entry[4] > 0 else math.nan)
    return Table(rows=[tuple(entry) for entry in entries], names=names, dtype=dtypes)


def emitCsv(rows, path):
    """Write benchmark rows as CSV; an empty table yields the header only."""
    rows.write(path, format="ascii.csv", overwrite=True)


def emitSummary(rows, path):
    """Write the summary of ``rows`` as CSV and return it."""
    summary = makeSummary(rows)
    summary.write(path, format="ascii.csv", overwrite=True)
    return summary


class BenchmarkTask(pipeBase.Task):
    """Run a scenario: every strategy for every sweep value, repeated.

    Runs that cannot be configured (for example an unstable explicit step
    at a fine surrogate level) produce a row with the error message and NaN
    metrics; the scenario continues.
    """
    ConfigClass = ScenarioConfig
    _DefaultName = "benchmark"

    @timeMethod
    def run(self):
        """Run the scenario.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            Result struct with components:

            ``rows``
                Per-run rows followed by median rows
                (`astropy.table.Table`).
            ``summary``
                Summary per sweep value and strategy
                (`astropy.table.Table`).
        """
        config = self.config
        rows = []
        for value in config.sweepValues:
            for strategy in config.strategies:
                for rep in range(config.repetitions):
                    rows.append(self.runOne(value, strategy, rep))
        runs = makeRowTable(rows)
        table = vstack([runs, medianRows(runs)]) if len(runs) else runs
        nErrors = int(np.sum(runs["error"] != "")) if len(runs) else 0
        self.log.info("Scenario %s: %d runs, %d failed", config.name, len(runs), nErrors)
        return pipeBase.Struct(rows=table, summary=makeSummary(runs))

    def makePairConfig(self, value, strategy, rep):
        """Return the pair configuration of one run."""
        pairConfig = copy.deepcopy(self.config.pair)
        applySweepValue(pairConfig, self.config.sweepVariable, value)
        pairConfig.server.strategy = strategy
        pairConfig.server.initialSeed = self.config.seed + rep
        pairConfig.server.synthetic.seed = self.config.seed + rep
        pairConfig.validate()
        return pairConfig

    def runOne(self, value, strategy, rep):
        """Run one session and return its row."""
        config = self.config
        runId = "%s-%s-%s=%g-rep%d" % (config.name, strategy, config.sweepVariable, value, rep)
        try:
            pairConfig = self.makePairConfig(value, strategy, rep)
            qMax = pairConfig.server.quality.qMax
            result = OffloadPairTask(config=pairConfig, name="pair").run()
        except (ConfigurationError, DimensionError, ProtocolError, ValueError) as e:
            self.log.warning("Run %s failed: %s", runId, e)
            return (runId, strategy, config.sweepVariable, value, str(rep)) + (math.nan,)*8 + (str(e),)

        error = ""
        server = result.server
        if server.strategy.isStream:
            if result.qualityA != 0:
                error = "stream quality %g is not zero" % result.qualityA
        elif pairConfig.server.synthetic.mode == "real" and not result.qualityA <= qMax:
            error = "quality %g exceeds bound %g" % (result.qualityA, qMax)
        if not result.trackerFidelity:
            error = (error + "; " if error else "") + "client diverged from tracked states"
        if error:
            self.log.warning("Run %s: %s", runId, error)
        return (runId, strategy, config.sweepVariable, value, str(rep), result.totalLatency,
                result.bytesSent, server.nCertify, server.nFull, server.nPartial,
                server.meanViolationFraction, result.qualityA, qMax, error)


class ViolationStudyConfig(pexConfig.Config):
    """How often the surrogate violates the bound, over quality bounds.
    """
    pair = pexConfig.ConfigField(
        doc="Base configuration of every run; the strategy is set by the study.",
        dtype=OffloadPairConfig,
    )
    qMaxValues = pexConfig.ListField(
        doc="Quality bounds studied.",
        dtype=float,
        default=[2.0**-5, 2.0**-6, 2.0**-7, 2.0**-8, 2.0**-9],
    )
    nSeeds = pexConfig.RangeField(
        doc="Initial states per bound.",
        dtype=int,
        default=10,
        min=1,
    )
    seed = pexConfig.Field(
        doc="Seed of the first initial state.",
        dtype=int,
        default=0,
    )
    includePartialUpdate = pexConfig.Field(
        doc="Also run the partial update strategy on every initial state and report how many of its "
            "updates were verified partial updates.  Much slower than the full update runs.",
        dtype=bool,
        default=False,
    )


class ViolationStudyTask(pipeBase.Task):
    """Measure violation states and violation points.

    Both are measured on full update runs, where the client state after
    every update is the restricted reference state.  The violation state
    ratio is the fraction of steps that need an update.  The violation
    point fraction is the mean fraction of surrogate points violating the
    bound in the violating steps (see `countViolationPoints`).
    """
    ConfigClass = ViolationStudyConfig
    _DefaultName = "violationStudy"

    @timeMethod
    def run(self):
        """Run the study.

        Returns
        -------
        result : `lsst.pipe.base.Struct`
            Result struct with components:

            ``rows``
                One row per bound and seed (`astropy.table.Table`); the
                partial update columns are NaN unless
                ``config.includePartialUpdate`` is set.
            ``summary``
                Medians per bound (`astropy.table.Table`).
        """
        config = self.config
        rows = []
        for qMax in config.qMaxValues:
            for index in range(config.nSeeds):
                seed = config.seed + index
                full = self._runStrategy("fullUpdate", qMax, seed)
                nSteps = len(full.server.log)
                partialColumns = (math.nan,)*3
                if config.includePartialUpdate:
                    partial = self._runStrategy("partialUpdate", qMax, seed)
                    partialColumns = (partial.server.nPartial, partial.server.nFull,
                                      partial.server.meanViolationFraction)
                rows.append((qMax, seed, full.server.nFull/nSteps if nSteps else math.nan,
                             full.server.meanViolationPointFraction) + partialColumns)
        names = ["q_max", "seed", "violation_state_ratio", "violation_point_fraction", "n_partial",
                 "n_fallback", "partial_update_fraction"]
        dtypes = [float, int, float, float, float, float, float]
        table = Table(rows=rows, names=names, dtype=dtypes) if rows else Table(names=names, dtype=dtypes)
        summaryRows = []
        if len(table):
            for group in table.group_by("q_max").groups:
                summaryRows.append((group["q_max"][0], _median(group["violation_state_ratio"]),
                                    _median(group["violation_point_fraction"])))
                self.log.info("qMax %g: median violation state ratio %.3f, point fraction %.4f",
                              *summaryRows[-1])
        summaryNames = ["q_max", "median_state_ratio", "median_point_fraction"]
        summary = (Table(rows=summaryRows, names=summaryNames, dtype=[float]*3) if summaryRows
                   else Table(names=summaryNames, dtype=[float]*3))
        return pipeBase.Struct(rows=table, summary=summary)

    def _runStrategy(self, strategy, qMax, seed):
        pairConfig = copy.deepcopy(self.config.pair)
        pairConfig.server.strategy = strategy
        pairConfig.server.quality.qMax = qMax
        pairConfig.server.initialSeed = seed
        pairConfig.server.synthetic.mode = "real"
        return OffloadPairTask(config=pairConfig, name=strategy).run()


def writeResults(result, outputDir, name):
    """Write ``result.rows`` and ``result.summary`` to ``outputDir``.

    Returns
    -------
    paths : `lsst.pipe.base.Struct`
        Struct with ``rows`` and ``summary`` paths.
    """
    os.makedirs(outputDir, exist_ok=True)
    rowsPath = os.path.join(outputDir, "%s.csv" % name)
    summaryPath = os.path.join(outputDir, "%s_summary.csv" % name)
    emitCsv(result.rows, rowsPath)
    result.summary.write(summaryPath, format="ascii.csv", overwrite=True)
    return pipeBase.Struct(rows=rowsPath, summary=summaryPath)
