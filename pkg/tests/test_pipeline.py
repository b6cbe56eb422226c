import contextlib
import io
import os
import tempfile
import unittest
from unittest.mock import patch

from setup_assets import CHEMISTRY_8Q, REFERENCE_8Q, Z_HEAVY, create_configs, create_hamiltonians
from src.config_manager import DEFAULT_CONFIG, ConfigManager, deep_merge, validate_config
from src.errors import ConfigError, DimensionMismatchError, ExperimentError, ThresholdError
from src.models import SchemeConfig, ThresholdConfig
from src.pipeline import BASELINE, IDEAL, QDT_LABEL, ExperimentPipeline, check_scheme_pair, check_thresholds


def sigmas(report):
    return report.absolute_error / report.standard_error


class PipelineTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.pipeline = ExperimentPipeline(output_dir=self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, observable_text=None, **extra):
        data = {"label": "trial", "settings": 400, "shots": 10, "state": {"bitstring": "010"},
                "observable": {"random": {"num_qubits": 3, "num_terms": 20, "seed": 3}}}
        if observable_text is not None:
            path = os.path.join(self.tmp.name, f"obs_{len(os.listdir(self.tmp.name))}.txt")
            with open(path, 'w', encoding='utf-8') as f:
                f.write(observable_text)
            data["observable"] = {"path": path, "random": None}
        data.update(extra)
        return validate_config(deep_merge(DEFAULT_CONFIG, data), self.tmp.name)


class TestRun(PipelineTestCase):
    def test_noiseless_run(self):
        bundle = self.pipeline.run(self.config(), persist=False)[0]
        self.assertEqual(set(bundle.reports), {IDEAL, QDT_LABEL})
        self.assertEqual(bundle.primary, QDT_LABEL)
        self.assertIsNone(bundle.directory)
        self.assertLess(sigmas(bundle.reports[IDEAL]), 4.0)
        self.assertEqual(bundle.reports[IDEAL].settings, 400)

    def test_ideal_primary_when_qdt_effects_off(self):
        bundle = self.pipeline.run(self.config(use_qdt_effects=False), persist=False)[0]
        self.assertEqual(bundle.primary, IDEAL)
        self.assertIn(QDT_LABEL, bundle.reports)

    def test_qdt_disabled(self):
        bundle = self.pipeline.run(self.config(qdt={"enabled": False}), persist=False)[0]
        self.assertEqual(set(bundle.reports), {IDEAL})

    def test_bias_reduction(self):
        config = self.config(
            "qubits 3\n1.0 ZII\n0.8 IZI\n-0.6 IIZ\n0.5 ZZI\n0.4 IZZ\n",
            settings=5000, shots=40, scheme={"name": "LBCS", "floor": 0.05},
            noise={"static_flip": 0.03},
            schedule={"mode": "regular", "shots_per_circuit": 100000},
            qdt={"regular_shots": 1000000},
            thresholds={"qdt_max_sigma": 4.0, "ideal_min_sigma": 3.0},
            curve_points=0,
        )
        bundle = self.pipeline.run(config, persist=False)[0]
        self.assertAlmostEqual(bundle.reference, -1.3, places=12)
        self.assertGreater(sigmas(bundle.reports[IDEAL]), 3.0)
        self.assertLess(sigmas(bundle.reports[QDT_LABEL]), 4.0)
        check_thresholds(bundle, config)

    def test_threshold_failure(self):
        config = self.config(thresholds={"ideal_min_sigma": 1000.0})
        bundle = self.pipeline.run(config, persist=False)[0]
        with self.assertRaises(ThresholdError):
            check_thresholds(bundle, config)
        relaxed = config.model_copy(update={"thresholds": ThresholdConfig()})
        check_thresholds(bundle, relaxed)

    def test_repetitions_get_own_folders_and_seeds(self):
        progress = []
        bundles = self.pipeline.run(self.config(repetitions=3, qdt={"enabled": False}),
                                    progress_callback=lambda p, msg: progress.append(p))
        self.assertEqual(len({b.seed for b in bundles}), 3)
        for i, bundle in enumerate(bundles):
            self.assertEqual(bundle.directory, os.path.join(self.tmp.name, "trial", f"rep_{i:03d}"))
            self.assertTrue(os.path.isfile(os.path.join(bundle.directory, "reports.csv")))
        self.assertEqual(progress[-1], 1.0)

    def test_deterministic_bundles(self):
        config = self.config()
        first = ExperimentPipeline(os.path.join(self.tmp.name, "a")).run(config)[0]
        second = ExperimentPipeline(os.path.join(self.tmp.name, "b")).run(config)[0]
        for name in ("reports.csv", "shots.csv", "qdt_records.csv", "schedule.csv"):
            with open(os.path.join(first.directory, name), 'rb') as f:
                a = f.read()
            with open(os.path.join(second.directory, name), 'rb') as f:
                b = f.read()
            self.assertEqual(a, b, name)

    def test_bundle_contents(self):
        bundle = self.pipeline.run(self.config())[0]
        for name in ("config.json", "observable.txt", "shots.csv", "qdt_records.csv", "tomography.csv",
                     "schedule.csv", "povm_ideal.json", "povm_qdt.json", "reports.csv", "reports.json",
                     "curve_ideal.csv", "curve_qdt.csv"):
            self.assertTrue(os.path.isfile(os.path.join(bundle.directory, name)), name)

    def test_replay_reproduces_reports(self):
        bundle = self.pipeline.run(self.config())[0]
        replayed = self.pipeline.replay(bundle.directory)
        self.assertEqual(set(replayed), set(bundle.reports))
        for label, report in bundle.reports.items():
            self.assertAlmostEqual(replayed[label].mean, report.mean, places=12)
            self.assertAlmostEqual(replayed[label].standard_error, report.standard_error, places=12)
            self.assertAlmostEqual(replayed[label].absolute_error, report.absolute_error, places=12)

    def test_infeasible_caps_wrapped(self):
        config = self.config(schedule={"circuits_per_job": 40})
        with self.assertRaises(ExperimentError):
            self.pipeline.run(config, persist=False)

    def test_qubit_mismatch_is_config_error(self):
        config = self.config("qubits 2\n1.0 ZZ\n")
        with self.assertRaises(ConfigError):
            self.pipeline.run(config, persist=False)

    @patch("src.pipeline.sample_settings")
    def test_value_errors_carry_label(self, mock_sample):
        mock_sample.side_effect = ValueError("bad basis distribution")
        with self.assertRaises(ExperimentError) as ctx:
            self.pipeline.run(self.config(), persist=False)
        self.assertIn("trial", str(ctx.exception))


class TestEightQubitScenarios(PipelineTestCase):
    def chemistry_config(self, **extra):
        data = {"label": "trial", "observable": {"random": dict(CHEMISTRY_8Q)},
                "state": {"bitstring": REFERENCE_8Q}, "scheme": {"name": "LBCS", "floor": 0.01},
                "curve_points": 0}
        data.update(extra)
        return validate_config(deep_merge(DEFAULT_CONFIG, data), self.tmp.name)

    def test_blended_bias_reduction(self):
        config = self.chemistry_config(settings=20000, shots=50, noise={"static_flip": 0.03})
        bundle = self.pipeline.run(config, persist=False)[0]
        ideal, qdt = bundle.reports[IDEAL], bundle.reports[QDT_LABEL]
        self.assertGreater(sigmas(ideal), 5.0)
        self.assertLess(sigmas(qdt), 4.0)
        self.assertGreater(ideal.absolute_error, 3 * qdt.absolute_error)

    def test_telegraph_window_biases_baseline(self):
        config = self.chemistry_config(
            settings=10000, shots=20,
            noise={"static_flip": 0.0, "telegraph": [
                {"qubit": 0, "e_good": 0.015, "e_bad": 0.15, "bad_windows": [[0.3, 0.8]]}
            ]},
            qdt={"baseline_shots": 20000},
        )
        bundle = self.pipeline.run(config, persist=False)[0]
        self.assertGreater(sigmas(bundle.reports[BASELINE]), 3.0)
        self.assertLess(sigmas(bundle.reports[QDT_LABEL]), 4.0)

    def test_lbcs_beats_cs(self):
        cs = self.config(
            label="cs", state={"bitstring": "0" * 8}, settings=2000, shots=10, repetitions=20,
            observable={"random": {"num_qubits": 8, "num_terms": 120, "coefficient_scale": 0.5, "seed": 81,
                                   "axis_weights": Z_HEAVY, "max_weight": 4}},
            qdt={"enabled": False}, use_qdt_effects=False, curve_points=0,
        )
        lbcs = cs.model_copy(update={"label": "lbcs", "scheme": SchemeConfig(name="LBCS", floor=0.01)})
        table = self.pipeline.compare_schemes(cs, lbcs)
        self.assertEqual(table["num_qubits"].unique().tolist(), [8])
        self.assertGreaterEqual(int(table["lbcs_better"].sum()), 18)


@unittest.skipUnless(os.environ.get("SHADOWBENCH_FULL_SCENARIOS"), "full-size scenarios take minutes")
class TestShippedScenarios(PipelineTestCase):
    def load(self, name):
        root = os.path.join(self.tmp.name, "assets")
        for sub in ("hamiltonians", "configs"):
            os.makedirs(os.path.join(root, sub), exist_ok=True)
        with contextlib.redirect_stdout(io.StringIO()):
            create_hamiltonians(root)
            create_configs(root)
        return ConfigManager(os.path.join(root, "configs", name)).load_config()

    def test_bias_reduction(self):
        config = self.load("bias_reduction.json")
        bundle = self.pipeline.run(config, persist=False)[0]
        check_thresholds(bundle, config)

    def test_telegraph_blending(self):
        config = self.load("telegraph_blending.json")
        bundle = self.pipeline.run(config, persist=False)[0]
        check_thresholds(bundle, config)
        self.assertGreater(sigmas(bundle.reports[BASELINE]), 3.0)


class TestCompareSchemes(PipelineTestCase):
    OBSERVABLE = ("qubits 4\n1.0 ZIII\n1.0 IZII\n1.0 IIZI\n1.0 IIIZ\n0.5 ZZII\n0.5 IIZZ\n"
                  "0.1 XIII\n0.1 IIXI\n")

    def pair(self):
        cs = self.config(self.OBSERVABLE, label="cs", state={"bitstring": "0000"}, settings=500, shots=10,
                         repetitions=20, qdt={"enabled": False}, use_qdt_effects=False, curve_points=0)
        lbcs = cs.model_copy(update={"label": "lbcs", "scheme": SchemeConfig(name="LBCS")})
        return cs, lbcs

    def test_lbcs_beats_cs_on_z_heavy_observable(self):
        cs, lbcs = self.pair()
        table = self.pipeline.compare_schemes(cs, lbcs)
        self.assertEqual(len(table), 20)
        self.assertGreaterEqual(int(table["lbcs_better"].sum()), 18)
        self.assertEqual(table["num_qubits"].unique().tolist(), [4])

    def test_mismatched_pair(self):
        cs, lbcs = self.pair()
        with self.assertRaises(ConfigError):
            check_scheme_pair(cs, lbcs.model_copy(update={"shots": 20}))
        with self.assertRaises(ConfigError):
            self.pipeline.compare_schemes(lbcs, cs)


class TestTomographyCommands(PipelineTestCase):
    def test_run_qdt(self):
        config = self.config(state={"bitstring": "00"},
                             observable={"random": {"num_qubits": 2, "num_terms": 4, "seed": 1}},
                             noise={"static_flip": 0.02}, qdt={"regular_shots": 100000})
        directory = os.path.join(self.tmp.name, "qdt")
        fits = self.pipeline.run_qdt(config, directory)
        self.assertEqual(len(fits), 2)
        for fit in fits:
            self.assertLess(abs((1.0 - fit.measurements[2, 0, 0, 0].real) - 0.02), 3e-3)
        self.assertTrue(os.path.isfile(os.path.join(directory, "tomography.csv")))
        self.assertTrue(os.path.isfile(os.path.join(directory, "povm_qdt.json")))

    def test_monitor_noiseless(self):
        bundle = self.pipeline.run(self.config())[0]
        series, consistency = self.pipeline.monitor(bundle.directory, 0, "Z", 0)
        self.assertEqual(list(series.columns), ["job", "time", "frequency", "sigma", "shots", "gap"])
        measured = series[~series["gap"]]
        self.assertTrue((measured["frequency"] == 1.0).all())
        consistency = consistency.set_index("pair")
        checked = consistency[~consistency["empty"]]
        self.assertFalse(checked["flagged"].any())
        self.assertTrue(consistency.loc["non_blended-experiment", "empty"])
        self.assertTrue(consistency.loc["non_blended-experiment", "flagged"])

    def test_monitor_qubit_out_of_range(self):
        bundle = self.pipeline.run(self.config(qdt={"enabled": False}))[0]
        with self.assertRaises(DimensionMismatchError):
            self.pipeline.monitor(bundle.directory, 3)
        with self.assertRaises(DimensionMismatchError):
            self.pipeline.monitor(bundle.directory, -1)

    def test_telegraph_blending(self):
        config = self.config(
            "qubits 1\n1.0 Z\n",
            label="telegraph", state={"bitstring": "0"}, settings=20000, shots=10,
            scheme={"name": "LBCS", "floor": 0.01},
            noise={"telegraph": [{"qubit": 0, "e_good": 0.015, "e_bad": 0.08, "bad_windows": [[0.6, 0.75]]}]},
            qdt={"repeats_per_job": 20, "shots_per_instance": 100, "baseline_shots": 100000},
            curve_points=0,
        )
        bundle = self.pipeline.run(config)[0]
        self.assertEqual(set(bundle.reports), {IDEAL, QDT_LABEL, BASELINE})
        self.assertGreater(sigmas(bundle.reports[BASELINE]), 3.0)
        self.assertLess(sigmas(bundle.reports[QDT_LABEL]), 4.0)

        _, consistency = self.pipeline.monitor(bundle.directory, 0, "Z", 0)
        consistency = consistency.set_index("pair")
        self.assertTrue(consistency.loc["non_blended-experiment", "flagged"])
        self.assertFalse(consistency.loc["blended-experiment", "flagged"])


if __name__ == '__main__':
    unittest.main()
