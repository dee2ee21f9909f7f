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

import lsst.utils.tests
from lsst.sim.offload import (ConfigurationError, HeatProblem, HeatProblemConfig, ModelKind, StateVector,
                              adiStep, checkFtcsStability, denseStepMatrix, eigenmodeState, ftcsStep,
                              makeGrid, makeInitialState, modelStep, runChain)


def discreteMode(grid):
    """Eigenvalue of the unit-spacing second difference for sin(pi*x)."""
    return 4.0*np.sin(0.5*np.pi*grid.dx)**2


class FtcsTestCase(lsst.utils.tests.TestCase):

    def setUp(self):
        self.grid = makeGrid(4)
        self.prob = HeatProblem(alpha=1.0, dt=5e-4)

    def testEigenmodeDecay(self):
        state = eigenmodeState(self.grid)
        r = self.prob.meshRatio(self.grid)
        factor = 1.0 - 2.0*r*discreteMode(self.grid)
        advanced = ftcsStep(state, self.prob)
        self.assertFloatsAlmostEqual(advanced.values, factor*state.values, atol=1e-13)

    def testBoundaryKept(self):
        grid = self.grid
        values = makeInitialState(grid, 5).values.copy()
        values[grid.boundaryMask] = 0.25
        advanced = ftcsStep(StateVector(grid, values), self.prob)
        self.assertFloatsEqual(advanced.values[grid.boundaryMask], 0.25)

    def testConstantStaysConstant(self):
        state = StateVector(self.grid, np.full(self.grid.nPoints, 0.5))
        self.assertFloatsAlmostEqual(ftcsStep(state, self.prob).values, 0.5, atol=1e-15)

    def testUnstable(self):
        prob = HeatProblem(alpha=1.0, dt=1e-3)
        grid = makeGrid(5)
        self.assertGreater(prob.meshRatio(grid), 0.25)
        with self.assertRaises(ConfigurationError):
            ftcsStep(makeInitialState(grid, 0), prob)
        with self.assertRaises(ConfigurationError):
            checkFtcsStability(grid, prob)
        self.assertAlmostEqual(checkFtcsStability(makeGrid(3), prob), 0.064)

    def testDenseMatrix(self):
        grid = makeGrid(2)
        prob = HeatProblem(alpha=1.0, dt=0.01)
        matrix = denseStepMatrix(ModelKind.FTCS_EXPLICIT, grid, prob)
        state = makeInitialState(grid, 11)
        self.assertFloatsAlmostEqual(matrix @ state.values, ftcsStep(state, prob).values, atol=1e-14)

    def testSinglePoint(self):
        grid = makeGrid(2)
        prob = HeatProblem(alpha=1.0, dt=0.25*grid.dx**2)
        self.assertEqual(prob.meshRatio(grid), 0.25)
        values = np.zeros(grid.nPoints)
        values[12] = 1.0
        advanced = ftcsStep(StateVector(grid, values), prob)
        expected = np.zeros(grid.nPoints)
        expected[[7, 11, 13, 17]] = 0.25
        self.assertFloatsAlmostEqual(advanced.values, expected, atol=1e-15)
        self.assertEqual(advanced.values[12], 0.0)

    def testMaximumPrinciple(self):
        grid = makeGrid(4)
        for r in (0.1, 0.25):
            with self.subTest(r=r):
                prob = HeatProblem(alpha=1.0, dt=r*grid.dx**2)
                state = makeInitialState(grid, 3)
                for _ in range(20):
                    advanced = ftcsStep(state, prob)
                    self.assertGreaterEqual(advanced.values.min(), state.values.min() - 1e-14)
                    self.assertLessEqual(advanced.values.max(), state.values.max() + 1e-14)
                    state = advanced

    def testSpatialOrder(self):
        # Constant mesh ratio, so the time step shrinks with dx**2; the
        # closed-form decay of sin(pi*x)*sin(pi*y) is the oracle.
        endTime = 6.25e-3
        errors = []
        for level in (4, 5, 6):
            grid = makeGrid(level)
            nSteps = int(round(endTime/(0.05*grid.dx**2)))
            prob = HeatProblem(alpha=1.0, dt=endTime/nSteps, nSteps=nSteps)
            initial = eigenmodeState(grid)
            final = runChain(initial, ModelKind.FTCS_EXPLICIT, prob)[-1]
            exact = np.exp(-2.0*np.pi**2*endTime)*initial.values
            errors.append(np.max(np.abs(final.values - exact)))
        orders = np.log2(np.array(errors[:-1])/np.array(errors[1:]))
        self.assertTrue(np.all(orders >= 1.8), msg="orders %s" % (orders,))


class AdiTestCase(lsst.utils.tests.TestCase):

    def testEigenmodeDecay(self):
        grid = makeGrid(4)
        prob = HeatProblem(alpha=1.0, dt=1e-3)
        state = eigenmodeState(grid)
        a = 0.5*prob.meshRatio(grid)*discreteMode(grid)
        factor = ((1.0 - a)/(1.0 + a))**2
        advanced = adiStep(state, prob)
        self.assertFloatsAlmostEqual(advanced.values, factor*state.values, atol=1e-12)

    def testBoundaryKept(self):
        grid = makeGrid(3)
        values = makeInitialState(grid, 5).values.copy()
        values[grid.boundaryMask] = 1.0
        advanced = adiStep(StateVector(grid, values), HeatProblem(1.0, 1e-2))
        self.assertFloatsEqual(advanced.values[grid.boundaryMask], 1.0)

    def testSteadyState(self):
        # u = x is harmonic and matches its own Dirichlet boundary.
        grid = makeGrid(3)
        x, _ = grid.coordinates()
        state = StateVector(grid, x)
        self.assertFloatsAlmostEqual(adiStep(state, HeatProblem(1.0, 0.1)).values, x, atol=1e-12)

    def testLargeMeshRatio(self):
        grid = makeGrid(4)
        prob = HeatProblem(alpha=1.0, dt=100.0*grid.dx**2)
        self.assertAlmostEqual(prob.meshRatio(grid), 100.0)
        state = eigenmodeState(grid)
        for _ in range(10):
            advanced = adiStep(state, prob)
            self.assertLess(np.max(np.abs(advanced.values)), np.max(np.abs(state.values)))
            state = advanced
        # A rough state stays bounded in the 2-norm.
        state = makeInitialState(grid, 2)
        norms = [np.linalg.norm(state.values)]
        for _ in range(10):
            state = adiStep(state, prob)
            norms.append(np.linalg.norm(state.values))
        self.assertTrue(state.isFinite())
        self.assertTrue(all(later <= earlier for earlier, later in zip(norms, norms[1:])))

    def testTemporalOrder(self):
        # Against the exact decay of the discrete mode, dt halvings at a fixed end time.
        grid = makeGrid(4)
        initial = eigenmodeState(grid)
        errors = []
        for nSteps in (20, 40, 80):
            prob = HeatProblem(alpha=1.0, dt=0.02/nSteps, nSteps=nSteps)
            exact = np.exp(-2.0*discreteMode(grid)*0.02/grid.dx**2)*initial.values
            final = runChain(initial, ModelKind.ADI_CRANK_NICOLSON, prob)[-1]
            errors.append(np.max(np.abs(final.values - exact)))
        orders = np.log2(np.array(errors[:-1])/np.array(errors[1:]))
        self.assertTrue(np.all(orders >= 1.9), msg="orders %s" % (orders,))

    def testSubSteps(self):
        grid = makeGrid(3)
        state = makeInitialState(grid, 9)
        prob = HeatProblem(alpha=1.0, dt=1e-3, nRef=2)
        expected = adiStep(adiStep(state, HeatProblem(1.0, 5e-4)), HeatProblem(1.0, 5e-4))
        advanced = modelStep(ModelKind.ADI_CRANK_NICOLSON, prob)(state)
        self.assertFloatsAlmostEqual(advanced.values, expected.values, atol=1e-15)

    def testCoarsestGrid(self):
        state = makeInitialState(makeGrid(0), 1)
        self.assertIs(adiStep(state, HeatProblem(1.0, 1e-3)), state)

    def testCloseToExact(self):
        # Both models approximate exp(-2 pi^2 t) decay of the slowest mode.
        grid = makeGrid(5)
        prob = HeatProblem(alpha=1.0, dt=1e-4, nSteps=50)
        initial = eigenmodeState(grid)
        exact = np.exp(-2.0*np.pi**2*prob.dt*prob.nSteps)*initial.values
        for kind in ModelKind:
            final = runChain(initial, kind, prob)[-1]
            self.assertFloatsAlmostEqual(final.values, exact, atol=2e-3)


class ChainTestCase(lsst.utils.tests.TestCase):

    def testChainLength(self):
        grid = makeGrid(3)
        prob = HeatProblem(alpha=1.0, dt=1e-3, nSteps=7)
        initial = makeInitialState(grid, 0)
        chain = runChain(initial, ModelKind.FTCS_EXPLICIT, prob)
        self.assertEqual(len(chain), 8)
        self.assertIs(chain[0], initial)
        self.assertFloatsEqual(chain[1].values, ftcsStep(initial, prob).values)

    def testDeterministic(self):
        grid = makeGrid(3)
        prob = HeatProblem(alpha=1.0, dt=1e-3, nSteps=5)
        first = runChain(makeInitialState(grid, 4), ModelKind.ADI_CRANK_NICOLSON, prob)
        second = runChain(makeInitialState(grid, 4), ModelKind.ADI_CRANK_NICOLSON, prob)
        self.assertTrue(all(a.isIdentical(b) for a, b in zip(first, second)))


    def testNoSteps(self):
        initial = makeInitialState(makeGrid(3), 1)
        for kind in ModelKind:
            chain = runChain(initial, kind, HeatProblem(alpha=1.0, dt=1e-3, nSteps=0))
            self.assertEqual(len(chain), 1)
            self.assertIs(chain[0], initial)

    def testReferenceSubStepChain(self):
        initial = makeInitialState(makeGrid(4), 6)
        prob = HeatProblem(alpha=1.0, dt=1e-3, nSteps=5, nRef=2)
        coarse = runChain(initial, ModelKind.ADI_CRANK_NICOLSON, prob)
        fine = runChain(initial, ModelKind.ADI_CRANK_NICOLSON, HeatProblem(1.0, prob.dt/2, nSteps=10))
        self.assertEqual(len(coarse), 6)
        for i, state in enumerate(coarse):
            self.assertTrue(state.isIdentical(fine[2*i]), msg="step %d" % i)

    def testLinearity(self):
        grid = makeGrid(3)
        prob = HeatProblem(alpha=1.0, dt=1e-3)
        first = makeInitialState(grid, 1)
        second = makeInitialState(grid, 2)
        combined = StateVector(grid, 0.7*first.values - 2.5*second.values)
        for kind in ModelKind:
            with self.subTest(kind=kind):
                step = modelStep(kind, prob)
                expected = 0.7*step(first).values - 2.5*step(second).values
                self.assertFloatsAlmostEqual(step(combined).values, expected, atol=1e-12)


class HeatProblemConfigTestCase(lsst.utils.tests.TestCase):

    def testDefaults(self):
        config = HeatProblemConfig()
        config.validate()
        prob = config.makeProblem()
        self.assertEqual(prob.nSteps, 100)
        self.assertAlmostEqual(prob.dt, 1e-4)
        self.assertAlmostEqual(prob.alpha, 0.01)
        self.assertLessEqual(prob.meshRatio(makeGrid(config.surrogateLevel)), 0.25)

    def testLevelOrder(self):
        config = HeatProblemConfig()
        config.surrogateLevel = 6
        config.referenceLevel = 5
        with self.assertRaises(ValueError):
            config.validate()

    def testBadProblem(self):
        with self.assertRaises(ConfigurationError):
            HeatProblem(alpha=0.0, dt=1e-3)
        with self.assertRaises(ConfigurationError):
            HeatProblem(alpha=1.0, dt=1e-3, nRef=0)


class MemoryTester(lsst.utils.tests.MemoryTestCase):
    pass


def setup_module(module):
    lsst.utils.tests.init()


if __name__ == "__main__":
    lsst.utils.tests.init()
    unittest.main()
