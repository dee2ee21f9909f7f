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

import unittest

import numpy as np
import scipy.linalg

import lsst.utils.tests
from lsst.sim.offload import (PINV_REL_TOL, ConfigurationError, DimensionError, Ensemble, EnsembleConfig,
                              HeatProblem, ModelKind, PartialObservation, SeedPolicy, analyze,
                              certifiedAdvance, forecast, generateMembers, kalmanGain, makeGrid,
                              makeInitialState, modelStep, runChain, sampleCovarianceAction, screenAnalysis)


class SeedPolicyTestCase(lsst.utils.tests.TestCase):

    def testDeterministic(self):
        policy = SeedPolicy(20150901)
        seeds = [policy.derive(step) for step in range(100)]
        self.assertEqual(seeds, [SeedPolicy(20150901).derive(step) for step in range(100)])
        self.assertEqual(len(set(seeds)), 100)
        self.assertTrue(all(0 <= seed < 2**64 for seed in seeds))
        self.assertNotEqual(SeedPolicy(1).derive(3), SeedPolicy(2).derive(3))

    def testRange(self):
        with self.assertRaises(ConfigurationError):
            SeedPolicy(-1)
        with self.assertRaises(ConfigurationError):
            SeedPolicy(2**64)
        SeedPolicy(2**64 - 1).derive(10**6)


class GenerateMembersTestCase(lsst.utils.tests.TestCase):

    def setUp(self):
        self.grid = makeGrid(3)
        self.state = makeInitialState(self.grid, 1)
        self.policy = SeedPolicy(7)

    def testReproducible(self):
        first = generateMembers(self.state, 8, self.policy, 3, 0.1)
        second = generateMembers(self.state, 8, self.policy, 3, 0.1)
        self.assertTrue(first.isIdentical(second))
        other = generateMembers(self.state, 8, self.policy, 4, 0.1)
        self.assertFalse(np.array_equal(first.members, other.members))

    def testBoundaryAndSpread(self):
        ensemble = generateMembers(self.state, 200, self.policy, 0, 0.1)
        boundary = self.grid.boundaryMask
        self.assertFloatsEqual(ensemble.members[:, boundary],
                               np.broadcast_to(self.state.values[boundary], (200, int(boundary.sum()))))
        spread = np.std(ensemble.deviations()[:, ~boundary])
        self.assertFloatsAlmostEqual(spread, 0.1, rtol=0.05)

    def testZeroSigma(self):
        ensemble = generateMembers(self.state, 4, self.policy, 0, 0.0)
        for j in range(4):
            self.assertTrue(ensemble.member(j).isIdentical(self.state))

    def testBadArguments(self):
        with self.assertRaises(ConfigurationError):
            generateMembers(self.state, 1, self.policy, 0, 0.1)
        with self.assertRaises(ConfigurationError):
            generateMembers(self.state, 4, self.policy, 0, -0.1)

    def testEnsembleShape(self):
        with self.assertRaises(DimensionError):
            Ensemble(self.grid, np.zeros((4, 10)), 0)
        with self.assertRaises(ConfigurationError):
            Ensemble(self.grid, np.zeros((1, self.grid.nPoints)), 0)


class ForecastTestCase(lsst.utils.tests.TestCase):

    def testMemberWise(self):
        grid = makeGrid(3)
        step = modelStep(ModelKind.FTCS_EXPLICIT, HeatProblem(1.0, 1e-3))
        ensemble = generateMembers(makeInitialState(grid, 2), 5, SeedPolicy(3), 4, 0.05)
        advanced = forecast(ensemble, step)
        self.assertEqual(advanced.step, 5)
        for j in range(5):
            self.assertTrue(advanced.member(j).isIdentical(step(ensemble.member(j))))
        self.assertTrue(certifiedAdvance(ensemble, step).isIdentical(advanced))


class AnalysisTestCase(lsst.utils.tests.TestCase):

    def setUp(self):
        self.grid = makeGrid(2)
        self.state = makeInitialState(self.grid, 5)
        self.ensemble = generateMembers(self.state, 12, SeedPolicy(11), 1, 0.1)
        self.indices = np.array([6, 8, 12, 17])
        self.values = self.state.values[self.indices] + np.array([0.05, -0.02, 0.1, 0.0])
        self.observation = PartialObservation(self.indices, self.values, self.grid.nPoints)

    def testObservedPointsMatch(self):
        analyzed = analyze(self.ensemble, self.observation)
        for j in range(analyzed.nMembers):
            self.assertFloatsAlmostEqual(analyzed.members[j, self.indices], self.values, atol=1e-10)
        self.assertFloatsAlmostEqual(analyzed.mean().values[self.indices], self.values, atol=1e-10)

    def testDenseOracle(self):
        members = self.ensemble.members
        deviations = members - members.mean(axis=0)
        covariance = deviations.T @ deviations/(members.shape[0] - 1)
        selection = np.zeros((len(self.indices), self.grid.nPoints))
        selection[np.arange(len(self.indices)), self.indices] = 1.0
        gain = covariance @ selection.T @ scipy.linalg.pinvh(selection @ covariance @ selection.T, atol=0.0,
                                                           rtol=1e-10)
        expected = members + (gain @ (self.values[:, np.newaxis] - selection @ members.T)).T

        analyzed = analyze(self.ensemble, self.observation)
        self.assertFloatsAlmostEqual(analyzed.members, expected, atol=1e-10)

        action = sampleCovarianceAction(self.ensemble, self.indices)
        self.assertFloatsAlmostEqual(action.cht, covariance @ selection.T, atol=1e-14)
        self.assertFloatsAlmostEqual(action.hcht, selection @ covariance @ selection.T, atol=1e-14)
        self.assertFloatsAlmostEqual(kalmanGain(action.cht, action.hcht), gain, atol=1e-10)

    def testRankDeficient(self):
        # More observed points than members: the analysis must stay finite.
        indices = self.grid.interiorIndices
        observation = PartialObservation(indices, self.state.values[indices] + 0.01)
        ensemble = generateMembers(self.state, 3, SeedPolicy(2), 0, 0.1)
        analyzed = analyze(ensemble, observation)
        self.assertTrue(np.all(np.isfinite(analyzed.members)))
        screened = screenAnalysis(ensemble, observation)
        self.assertFloatsAlmostEqual(screened.values, analyzed.mean().values, atol=1e-10)

    def testCollapsedEnsemble(self):
        ensemble = generateMembers(self.state, 6, SeedPolicy(2), 0, 0.0)
        analyzed = analyze(ensemble, self.observation)
        self.assertFloatsEqual(analyzed.members, ensemble.members)
        self.assertTrue(screenAnalysis(ensemble, self.observation).isIdentical(ensemble.mean()))

    def testScreenMatchesAnalysis(self):
        analyzed = analyze(self.ensemble, self.observation)
        screened = screenAnalysis(self.ensemble, self.observation)
        self.assertFloatsAlmostEqual(screened.values, analyzed.mean().values, atol=1e-10)

    def testBoundaryUnchanged(self):
        analyzed = analyze(self.ensemble, self.observation)
        boundary = self.grid.boundaryMask
        self.assertFloatsAlmostEqual(analyzed.members[:, boundary], self.ensemble.members[:, boundary],
                                     atol=1e-15)

    def testEmptyObservation(self):
        with self.assertRaises(ValueError):
            analyze(self.ensemble, PartialObservation([], []))


class RandomizedAnalysisTestCase(lsst.utils.tests.TestCase):
    """Compare the analysis with dense covariance matrices on random
    ensembles and selections.
    """

    def denseAnalysis(self, members, indices, values):
        deviations = members - members.mean(axis=0)
        covariance = deviations.T @ deviations/(members.shape[0] - 1)
        selection = np.zeros((len(indices), members.shape[1]))
        selection[np.arange(len(indices)), indices] = 1.0
        gain = covariance @ selection.T @ scipy.linalg.pinvh(selection @ covariance @ selection.T, atol=0.0,
                                                           rtol=1e-10)
        return members + (gain @ (values[:, np.newaxis] - selection @ members.T)).T

    def testDenseOracle(self):
        rng = np.random.default_rng(20240611)
        nCases = 0
        for level in (1, 2, 3):
            grid = makeGrid(level)
            interior = grid.interiorIndices
            for nMembers in (3, 8, 50):
                # Selection sizes stay away from nMembers - 1, where the
                # observed covariance is badly conditioned.
                fullRank = range(1, min(nMembers - 2, len(interior)) + 1)
                deficient = range(nMembers + 2, len(interior) + 1)
                for caseId in range(12):
                    sizes = fullRank if caseId % 3 or not deficient else deficient
                    if not sizes:
                        continue
                    nObserved = int(rng.choice(sizes))
                    indices = np.sort(rng.choice(interior, nObserved, replace=False))
                    state = makeInitialState(grid, int(rng.integers(2**31)))
                    ensemble = generateMembers(state, nMembers, SeedPolicy(int(rng.integers(2**63))), caseId,
                                               float(rng.uniform(0.01, 0.2)))
                    values = state.values[indices] + rng.normal(0.0, 0.05, nObserved)
                    observation = PartialObservation(indices, values, grid.nPoints)
                    with self.subTest(level=level, nMembers=nMembers, nObserved=nObserved, caseId=caseId):
                        analyzed = analyze(ensemble, observation)
                        expected = self.denseAnalysis(ensemble.members, indices, values)
                        self.assertFloatsAlmostEqual(analyzed.members, expected, atol=1e-8)
                        if nObserved < nMembers - 1:
                            forecastMiss = np.abs(ensemble.mean().values[indices] - values)
                            analyzedMiss = np.abs(analyzed.mean().values[indices] - values)
                            self.assertTrue(np.all(analyzedMiss <= forecastMiss + 1e-10))
                            self.assertFloatsAlmostEqual(analyzed.members[:, indices],
                                                         np.broadcast_to(values, (nMembers, nObserved)),
                                                         atol=1e-8)
                    nCases += 1
        self.assertGreaterEqual(nCases, 100)

    def testScalarObservation(self):
        grid = makeGrid(3)
        ensemble = generateMembers(makeInitialState(grid, 4), 8, SeedPolicy(5), 2, 0.1)
        for index in (10, 40, 60):
            analyzed = analyze(ensemble, PartialObservation([index], [0.75], grid.nPoints))
            self.assertFloatsAlmostEqual(analyzed.members[:, index], np.full(8, 0.75), atol=1e-12)

    def testFullObservationTracksReference(self):
        grid = makeGrid(2)
        problem = HeatProblem(1.0, 1e-3, nSteps=5)
        reference = runChain(makeInitialState(grid, 8), ModelKind.ADI_CRANK_NICOLSON, problem)
        step = modelStep(ModelKind.FTCS_EXPLICIT, problem)
        policy = SeedPolicy(17)
        allPoints = np.arange(grid.nPoints)
        mean = reference[0]
        for n in range(1, problem.nSteps + 1):
            ensemble = forecast(generateMembers(mean, 50, policy, n - 1, 0.05), step)
            self.assertFalse(ensemble.mean().isIdentical(reference[n]))
            analyzed = analyze(ensemble, PartialObservation(allPoints, reference[n].values))
            mean = analyzed.mean()
            self.assertFloatsAlmostEqual(mean.values, reference[n].values, atol=1e-12)


class PartialObservationTestCase(lsst.utils.tests.TestCase):

    def testValidation(self):
        with self.assertRaises(ValueError):
            PartialObservation([3, 2], [0.0, 1.0])
        with self.assertRaises(ValueError):
            PartialObservation([1, 1], [0.0, 1.0])
        with self.assertRaises(ValueError):
            PartialObservation([1, 30], [0.0, 1.0], nPoints=25)
        with self.assertRaises(ValueError):
            PartialObservation([1], [np.nan])
        with self.assertRaises(DimensionError):
            PartialObservation([1, 2], [0.0])
        observation = PartialObservation([2, 5], [0.5, 0.25])
        self.assertEqual(observation.pairs, [(2, 0.5), (5, 0.25)])


class EnsembleConfigTestCase(lsst.utils.tests.TestCase):

    def testSigma(self):
        config = EnsembleConfig()
        self.assertEqual(config.getSigma(2.0**-7), 2.0**-8)
        config.sigma = 0.01
        self.assertEqual(config.getSigma(2.0**-7), 0.01)
        config.sigma = -1.0
        with self.assertRaises(ValueError):
            config.validate()

    def testPinvRelTol(self):
        config = EnsembleConfig()
        self.assertEqual(config.pinvRelTol, PINV_REL_TOL)
        self.assertEqual(PINV_REL_TOL, 1e-10)
        with self.assertRaises(ValueError):
            config.pinvRelTol = 0.0
            config.validate()


class MemoryTester(lsst.utils.tests.MemoryTestCase):
    pass


def setup_module(module):
    lsst.utils.tests.init()


if __name__ == "__main__":
    lsst.utils.tests.init()
    unittest.main()
