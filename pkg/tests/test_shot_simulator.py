import os
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from src.errors import ScheduleError
from src.processors.detector_noise import AssignmentMatrix, DetectorModel
from src.processors.estimator import estimate
from src.processors.pauli_algebra import ProductState, random_observable
from src.processors.povm_frames import BasisDistribution, ProductPovm
from src.processors.scheduler import JobCaps, blended_schedule, regular_schedule
from src.processors.shot_simulator import (
    ExperimentPlan,
    born_probabilities,
    read_qdt_records,
    read_shot_stream,
    sample_settings,
    simulate_qdt_shots,
    simulate_schedule,
    simulate_shots,
    unique_rows,
    write_qdt_records,
    write_shot_stream,
)


def three_sigma(p, n):
    return 3 * np.sqrt(p * (1 - p) / n)


def single_setting_outcomes(state, setting, shots, model, seed=0):
    schedule = regular_schedule([shots], 0, JobCaps(300, shots))
    settings = np.array([setting], dtype=np.int8)
    blocks = simulate_shots(state, settings, shots, model, schedule, seed)
    return np.concatenate([b.outcomes for b in blocks])


class TestSampleSettings(unittest.TestCase):
    def test_forced_x(self):
        dist = BasisDistribution(p_x=1.0, p_y=0.0, p_z=0.0, floor=0.0)
        settings = sample_settings([dist] * 3, 50, seed=1)
        self.assertEqual(settings.shape, (50, 3))
        self.assertFalse(settings.any())

    def test_symmetric_frequencies(self):
        num = 30000
        settings = sample_settings([BasisDistribution.symmetric()] * 2, num, seed=4)
        for q in range(2):
            for b in range(3):
                frequency = np.mean(settings[:, q] == b)
                self.assertLess(abs(frequency - 1 / 3), three_sigma(1 / 3, num))

    def test_deterministic(self):
        dists = [BasisDistribution.symmetric()] * 4
        assert_array_equal(sample_settings(dists, 100, seed=7), sample_settings(dists, 100, seed=7))
        self.assertFalse(np.array_equal(sample_settings(dists, 100, seed=7), sample_settings(dists, 100, seed=8)))


class TestSimulateShots(unittest.TestCase):
    def test_eigenstate_noiseless(self):
        outcomes = single_setting_outcomes(ProductState.from_bitstring("0"), [2], 1000, DetectorModel.noiseless(1))
        self.assertFalse(outcomes.any())

    def test_x_on_zero(self):
        shots = 10000
        outcomes = single_setting_outcomes(ProductState.from_bitstring("0"), [0], shots, DetectorModel.noiseless(1), 3)
        self.assertLess(abs(outcomes.mean() - 0.5), three_sigma(0.5, shots))

    def test_static_flip(self):
        shots = 100000
        outcomes = single_setting_outcomes(ProductState.from_bitstring("0"), [2], shots,
                                           DetectorModel.uniform(1, 0.02), 5)
        self.assertLess(abs(outcomes.mean() - 0.02), three_sigma(0.02, shots))

    def test_matches_born_probabilities(self):
        state = ProductState.from_bloch_angles([(0.7, 0.2), (2.1, -1.0), (1.3, 0.5)])
        setting = [0, 1, 2]
        shots = 100000
        outcomes = single_setting_outcomes(state, setting, shots, DetectorModel.noiseless(3), 11)
        index = outcomes.astype(int) @ np.array([4, 2, 1])
        observed = np.bincount(index, minlength=8) / shots
        expected = born_probabilities(state, setting)
        for p, f in zip(expected, observed):
            self.assertLess(abs(f - p), 4 * np.sqrt(p * (1 - p) / shots) + 1e-12)

    def test_qubits_independent(self):
        state = ProductState.from_labels(["+", "+"])
        shots = 50000
        outcomes = single_setting_outcomes(state, [2, 2], shots, DetectorModel.noiseless(2), 13).astype(float)
        correlation = np.corrcoef(outcomes[:, 0], outcomes[:, 1])[0, 1]
        self.assertLess(abs(correlation), 4 / np.sqrt(shots))

    def test_plan_mismatch(self):
        schedule = regular_schedule([10, 10], 0, JobCaps(300, 100))
        settings = np.zeros((2, 1), dtype=np.int8)
        with self.assertRaises(ScheduleError):
            simulate_shots(ProductState.from_bitstring("0"), settings, 20, DetectorModel.noiseless(1), schedule, 0)

    def test_plan_model(self):
        plan = ExperimentPlan(settings=100, shots=20, seed=3)
        self.assertEqual(plan.total_shots, 2000)
        self.assertEqual(plan.caps, JobCaps(300, 100))


class TestSimulateQdtShots(unittest.TestCase):
    def test_plus_in_x(self):
        counts = simulate_qdt_shots("+", "X", 1000, DetectorModel.noiseless(3), seed=1)
        assert_array_equal(counts, [[1000, 0]] * 3)

    def test_plus_y_in_z(self):
        shots = 100000
        counts = simulate_qdt_shots("+y", "Z", shots, DetectorModel.noiseless(1), seed=2)
        self.assertLess(abs(counts[0, 0] / shots - 0.5), three_sigma(0.5, shots))

    def test_one_with_flip(self):
        shots = 100000
        counts = simulate_qdt_shots("1", "Z", shots, DetectorModel.uniform(2, 0.03), seed=3)
        for q in range(2):
            self.assertLess(abs(counts[q, 0] / shots - 0.03), three_sigma(0.03, shots))


class TestScheduleSimulation(unittest.TestCase):
    def setUp(self):
        self.state = ProductState.from_bloch_angles([(0.4, 0.0), (1.2, 0.3), (2.5, 1.1)])
        self.settings = sample_settings([BasisDistribution.symmetric()] * 3, 600, seed=2)
        self.model = DetectorModel([AssignmentMatrix.symmetric(f) for f in (0.01, 0.02, 0.03)])
        self.schedule = blended_schedule([10] * 600, 2, 50, JobCaps(120, 100))

    def test_worker_count_does_not_change_samples(self):
        serial = simulate_schedule(self.state, self.settings, self.model, self.schedule, seed=5, workers=1)
        parallel = simulate_schedule(self.state, self.settings, self.model, self.schedule, seed=5, workers=4)
        self.assertEqual(len(serial.blocks), len(parallel.blocks))
        for a, b in zip(serial.blocks, parallel.blocks):
            assert_array_equal(a.outcomes, b.outcomes)
            self.assertEqual((a.job_index, a.position, a.setting_index), (b.job_index, b.position, b.setting_index))
        for a, b in zip(serial.qdt_records, parallel.qdt_records):
            assert_array_equal(a.counts, b.counts)

    def test_provenance(self):
        result = simulate_schedule(self.state, self.settings, self.model, self.schedule, seed=5)
        self.assertEqual(len(result.blocks), 600)
        self.assertEqual(len(result.qdt_records), 24 * len(self.schedule.jobs))
        for block in result.blocks:
            self.assertEqual(block.timestamp, self.schedule.jobs[block.job_index].slot_start)

    def test_stream_files_replay_estimate(self):
        result = simulate_schedule(self.state, self.settings, self.model, self.schedule, seed=5)
        obs = random_observable(3, 20, 1.0, seed=1)
        povm = ProductPovm.ideal([BasisDistribution.symmetric()] * 3)
        with tempfile.TemporaryDirectory() as tmp:
            shots_path = os.path.join(tmp, "shots.csv")
            qdt_path = os.path.join(tmp, "qdt.csv")
            write_shot_stream(result.blocks, shots_path)
            write_qdt_records(result.qdt_records, qdt_path)
            blocks = read_shot_stream(shots_path)
            records = read_qdt_records(qdt_path)

        self.assertEqual(estimate(obs, povm, blocks), estimate(obs, povm, result.blocks))
        self.assertEqual([(b.job_index, b.setting_index) for b in blocks],
                         [(b.job_index, b.setting_index) for b in result.blocks])
        self.assertEqual(len(records), len(result.qdt_records))
        for a, b in zip(records, result.qdt_records):
            self.assertEqual((a.job_index, a.group, a.input_label, a.basis), (b.job_index, b.group, b.input_label, b.basis))
            assert_array_equal(a.counts, b.counts)


class TestUniqueRows(unittest.TestCase):
    def test_counts_and_order(self):
        groups = np.array([1, 0, 1, 1, 0])
        outcomes = np.array([[1, 0], [0, 1], [1, 0], [0, 0], [0, 1]])
        ids, bits, counts = unique_rows(groups, outcomes)
        assert_array_equal(ids, [0, 1, 1])
        assert_array_equal(bits, [[0, 1], [0, 0], [1, 0]])
        assert_array_equal(counts, [2, 1, 2])

    def test_wide_rows_fallback(self):
        rng = np.random.default_rng(0)
        outcomes = rng.integers(0, 2, size=(200, 70))
        groups = np.repeat(np.arange(4), 50)
        ids, bits, counts = unique_rows(groups, outcomes)
        self.assertEqual(counts.sum(), 200)
        self.assertEqual(bits.shape[1], 70)


if __name__ == '__main__':
    unittest.main()
