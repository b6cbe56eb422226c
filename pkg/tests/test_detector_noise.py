import unittest

import numpy as np
from numpy.testing import assert_allclose

from src.errors import NotInformationallyCompleteError, TrajectoryRangeError
from src.processors.detector_noise import (
    BAD,
    GOOD,
    AssignmentMatrix,
    DetectorModel,
    RegimeTrajectory,
    TelegraphProcess,
    effective_assignment,
    noisy_effects,
    sample_regime_trajectory,
    time_averaged_effects,
    trajectory_frame,
)
from src.processors.povm_frames import BasisDistribution, LocalPovm, canonical_dual, ideal_local_povm


class TestNoisyEffects(unittest.TestCase):
    def setUp(self):
        self.ideal = ideal_local_povm(BasisDistribution.symmetric())

    def test_identity_leaves_effects(self):
        assert_allclose(noisy_effects(self.ideal, AssignmentMatrix.identity()).effects, self.ideal.effects)

    def test_symmetric_flip(self):
        noisy = noisy_effects(self.ideal, AssignmentMatrix.symmetric(0.02))
        assert_allclose(noisy.effect("Z", 0), np.diag([0.98 / 3, 0.02 / 3]), atol=1e-15)

    def test_fully_random_readout_loses_information(self):
        noisy = noisy_effects(self.ideal, AssignmentMatrix.symmetric(0.5))
        for effect, p in zip(noisy.effects, np.repeat(noisy.basis_probabilities, 2)):
            assert_allclose(effect, p / 2 * np.eye(2), atol=1e-15)
        with self.assertRaises(NotInformationallyCompleteError):
            canonical_dual(noisy)

    def test_per_basis_matrices(self):
        noisy = noisy_effects(self.ideal, [AssignmentMatrix.symmetric(0.1), AssignmentMatrix.identity(),
                                           AssignmentMatrix.identity()])
        assert_allclose(noisy.effect("Z", 0), self.ideal.effect("Z", 0), atol=1e-15)
        self.assertAlmostEqual(noisy.probabilities(np.diag([1.0, 0.0]))[4], 1 / 3)
        plus = np.full((2, 2), 0.5)
        self.assertAlmostEqual(noisy.probabilities(plus)[0], 0.9 / 3)

    def test_composition_order(self):
        composed = AssignmentMatrix.symmetric(0.01).then(AssignmentMatrix.symmetric(0.08))
        self.assertAlmostEqual(composed.p01, 0.01 * (1 - 0.08) + 0.99 * 0.08)


class TestRegimeTrajectory(unittest.TestCase):
    def test_no_switching(self):
        trajectory = sample_regime_trajectory(TelegraphProcess(e_good=0.01, e_bad=0.1), 100.0, seed=1)
        self.assertEqual(trajectory.segments(), [(0.0, 100.0, GOOD)])

    def test_immediate_permanent_switch(self):
        proc = TelegraphProcess(e_good=0.01, e_bad=0.1, rate_gb=1e9, rate_bg=0.0)
        trajectory = sample_regime_trajectory(proc, 100.0, seed=2)
        self.assertEqual(trajectory.regime_at(1.0), BAD)
        self.assertGreater(trajectory.bad_fraction(), 0.999)

    def test_stationary_occupancy(self):
        proc = TelegraphProcess(e_good=0.01, e_bad=0.1, rate_gb=1 / 600, rate_bg=1 / 300, initial_regime="stationary")
        fractions = np.array([sample_regime_trajectory(proc, 3000.0, seed=s).bad_fraction() for s in range(10000)])
        stderr = fractions.std(ddof=1) / np.sqrt(fractions.size)
        self.assertLess(abs(fractions.mean() - 1 / 3), 3 * stderr)

    def test_from_windows(self):
        trajectory = RegimeTrajectory.from_windows([(20.0, 40.0), (80.0, 120.0)], 100.0)
        self.assertEqual([s[2] for s in trajectory.segments()], [GOOD, BAD, GOOD, BAD])
        self.assertAlmostEqual(trajectory.bad_fraction(), 0.4)
        self.assertEqual(trajectory.regime_at(40.0), GOOD)

    def test_overlapping_windows(self):
        with self.assertRaises(ValueError):
            RegimeTrajectory.from_windows([(50.0, 100.0), (60.0, 80.0)], 100.0)
        with self.assertRaises(ValueError):
            RegimeTrajectory.from_windows([(10.0, 40.0), (30.0, 60.0)], 100.0)

    def test_out_of_range(self):
        trajectory = RegimeTrajectory.constant(GOOD, 10.0)
        with self.assertRaises(TrajectoryRangeError):
            trajectory.regime_at(10.5)
        with self.assertRaises(TrajectoryRangeError):
            trajectory.regimes_at([-1.0, 2.0])


class TestDetectorModel(unittest.TestCase):
    def test_static_only(self):
        model = DetectorModel([AssignmentMatrix.symmetric(0.03)])
        self.assertEqual(effective_assignment(model, 0, 5.0), AssignmentMatrix.symmetric(0.03))

    def test_good_regime_flip(self):
        proc = TelegraphProcess(e_good=0.015, e_bad=0.08)
        model = DetectorModel([AssignmentMatrix.identity()], {0: proc}, {0: RegimeTrajectory.constant(GOOD, 10.0)})
        self.assertAlmostEqual(model.effective_assignment(0, 3.0).p01, 0.015)

    def test_bad_regime_composition(self):
        proc = TelegraphProcess(e_good=0.015, e_bad=0.08)
        model = DetectorModel([AssignmentMatrix.symmetric(0.01)], {0: proc},
                              {0: RegimeTrajectory.constant(BAD, 10.0)})
        self.assertAlmostEqual(model.effective_assignment(0, 3.0).p01, 0.0884)

    def test_asymmetric_telegraph(self):
        proc = TelegraphProcess(e_good=0.01, e_bad=0.1, e_bad_10=0.02)
        model = DetectorModel([AssignmentMatrix.identity()], {0: proc}, {0: RegimeTrajectory.constant(BAD, 1.0)})
        a = model.effective_assignment(0, 0.5)
        self.assertAlmostEqual(a.p01, 0.1)
        self.assertAlmostEqual(a.p10, 0.02)

    def test_basis_flip(self):
        model = DetectorModel([AssignmentMatrix.identity()] * 2, basis_flips={"X": 0.1})
        self.assertAlmostEqual(model.effective_assignment(1, 0.0, "X").p01, 0.1)
        self.assertTrue(model.effective_assignment(1, 0.0, "Z").is_identity())

    def test_missing_trajectory(self):
        model = DetectorModel([AssignmentMatrix.identity()], {0: TelegraphProcess(e_good=0.0, e_bad=0.1)})
        with self.assertRaises(TrajectoryRangeError):
            model.effective_assignment(0, 1.0)

    def test_tensor_matches_pointwise(self):
        proc = TelegraphProcess(e_good=0.015, e_bad=0.08, rate_gb=0.05, rate_bg=0.05)
        model = DetectorModel([AssignmentMatrix.symmetric(0.02), AssignmentMatrix.symmetric(0.01)], {1: proc},
                              basis_flips={"Y": 0.03}).with_trajectories(200.0, seed=4)
        times = np.linspace(0, 200, 41)
        tensor = model.assignment_tensor(times)
        for t_idx in (0, 17, 40):
            for q in (0, 1):
                for b in range(3):
                    expected = model.effective_assignment(q, times[t_idx], b).matrix()
                    assert_allclose(tensor[t_idx, q, b], expected, atol=1e-14)

    def test_trajectories_are_seeded(self):
        proc = TelegraphProcess(e_good=0.0, e_bad=0.1, rate_gb=0.1, rate_bg=0.1)
        a = DetectorModel([AssignmentMatrix.identity()], {0: proc}).with_trajectories(500.0, seed=9)
        b = DetectorModel([AssignmentMatrix.identity()], {0: proc}).with_trajectories(500.0, seed=9)
        assert_allclose(a.trajectories[0].switch_times, b.trajectories[0].switch_times)


class TestTimeAveragedEffects(unittest.TestCase):
    def setUp(self):
        self.ideal = ideal_local_povm(BasisDistribution.symmetric())
        self.proc = TelegraphProcess(e_good=0.0, e_bad=0.1)

    def test_constant_regime(self):
        model = DetectorModel([AssignmentMatrix.identity()], {0: self.proc}, {0: RegimeTrajectory.constant(BAD, 50.0)})
        averaged = time_averaged_effects(self.ideal, model, 0)
        assert_allclose(averaged.effects, noisy_effects(self.ideal, AssignmentMatrix.symmetric(0.1)).effects,
                        atol=1e-15)

    def test_half_bad(self):
        trajectory = RegimeTrajectory.from_windows([(50.0, 100.0)], 100.0)
        model = DetectorModel([AssignmentMatrix.identity()], {0: self.proc}, {0: trajectory})
        averaged = time_averaged_effects(self.ideal, model, 0)
        assert_allclose(averaged.effect("Z", 0), np.diag([0.95 / 3, 0.05 / 3]), atol=1e-15)
        LocalPovm(averaged.effects)

    def test_window_restriction(self):
        trajectory = RegimeTrajectory.from_windows([(50.0, 100.0)], 100.0)
        model = DetectorModel([AssignmentMatrix.identity()], {0: self.proc}, {0: trajectory})
        self.assertAlmostEqual(model.time_averaged_assignment(0, "Z", (0.0, 50.0)).p01, 0.0)
        with self.assertRaises(TrajectoryRangeError):
            model.time_averaged_assignment(0, "Z", (0.0, 150.0))

    def test_trajectory_frame(self):
        trajectory = RegimeTrajectory.from_windows([(50.0, 100.0)], 100.0)
        model = DetectorModel([AssignmentMatrix.identity()], {0: self.proc}, {0: trajectory})
        frame = trajectory_frame(model)
        self.assertEqual(list(frame.columns), ["time", "qubit", "regime", "flip_probability"])
        self.assertEqual(frame["regime"].tolist(), ["good", "bad"])
        assert_allclose(frame["flip_probability"], [0.0, 0.1])


if __name__ == '__main__':
    unittest.main()
