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

"""Command-line front end of sim_offload.
"""

__all__ = ["main", "makeParser"]

import argparse
import logging
import sys

from lsst.utils.logging import getLogger

from .bench import BenchmarkTask, ScenarioConfig, ViolationStudyConfig, ViolationStudyTask, writeResults
from .offloadClient import OffloadClientConfig, OffloadClientTask
from .offloadServer import OffloadServerConfig, OffloadServerTask
from .transport import TcpListener, TcpTransport, parseAddress

_LOG = getLogger("lsst.sim.offload.cli")

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def makeParser():
    parser = argparse.ArgumentParser(prog="sim_offload",
                                     description="Offload a heat simulation to a client with a surrogate.")
    parser.add_argument("--log-level", default="INFO", choices=LOG_LEVELS, help="Logging level.")
    commands = parser.add_subparsers(dest="command", required=True)

    bench = commands.add_parser("bench", help="Run benchmarks in virtual time.")
    benchCommands = bench.add_subparsers(dest="benchCommand", required=True)
    run = benchCommands.add_parser("run", help="Run a scenario file.")
    run.add_argument("scenario", help="Config override file for a ScenarioConfig (root name 'config').")
    run.add_argument("--output", default=".", help="Directory for the CSV files.")
    violations = benchCommands.add_parser("violations", help="Measure violation states and points.")
    violations.add_argument("--config", help="Config override file for a ViolationStudyConfig.")
    violations.add_argument("--seeds", type=int, help="Initial states per quality bound.")
    violations.add_argument("--output", default=".", help="Directory for the CSV files.")

    serve = commands.add_parser("serve", help="Serve one session over TCP.")
    serve.add_argument("--tcp", required=True, metavar="HOST:PORT", help="Address to listen on.")
    serve.add_argument("--config", help="Config override file for an OffloadServerConfig.")

    client = commands.add_parser("client", help="Run a client against a TCP server.")
    client.add_argument("--tcp", required=True, metavar="HOST:PORT", help="Server address.")
    client.add_argument("--mode", choices=("optimistic", "pessimistic"), default="optimistic",
                        help="When the client computes its own surrogate results.")
    client.add_argument("--timeout", type=float, default=30.0, help="Connection timeout in seconds.")
    return parser


def _loadConfig(configClass, path):
    config = configClass()
    if path is not None:
        config.load(path)
    return config


def _benchRun(args):
    config = _loadConfig(ScenarioConfig, args.scenario)
    config.validate()
    result = BenchmarkTask(config=config).run()
    paths = writeResults(result, args.output, config.name)
    _LOG.info("Wrote %s and %s", paths.rows, paths.summary)
    return 1 if any(result.rows["error"] != "") else 0


def _benchViolations(args):
    config = _loadConfig(ViolationStudyConfig, args.config)
    if args.seeds is not None:
        config.nSeeds = args.seeds
    config.validate()
    result = ViolationStudyTask(config=config).run()
    paths = writeResults(result, args.output, "violations")
    _LOG.info("Wrote %s and %s", paths.rows, paths.summary)
    return 0


def _serve(args):
    config = _loadConfig(OffloadServerConfig, args.config)
    config.validate()
    host, port = parseAddress(args.tcp)
    listener = TcpListener(host, port)
    _LOG.info("Listening on %s:%d", *listener.address)
    try:
        transport = listener.accept()
    finally:
        listener.close()
    try:
        result = OffloadServerTask(config=config).run(transport)
    finally:
        transport.close()
    return 1 if result.aborted else 0


def _client(args):
    config = OffloadClientConfig()
    config.mode = args.mode
    host, port = parseAddress(args.tcp)
    transport = TcpTransport.connect(host, port, timeout=args.timeout)
    try:
        result = OffloadClientTask(config=config).run(transport)
    finally:
        transport.close()
    _LOG.info("Published %d states in %.3f s", len(result.chain), result.totalLatency)
    return 0


def main(argv=None):
    """Run the command line; returns the exit status."""
    args = makeParser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("lsst").setLevel(args.log_level)
    if args.command == "bench":
        handler = _benchRun if args.benchCommand == "run" else _benchViolations
    elif args.command == "serve":
        handler = _serve
    else:
        handler = _client
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
