import json
import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from src.errors import ReportError
from src.processors.estimator import EstimateReport
from src.reporting import (
    REPORT_COLUMNS,
    SCHEMA_VERSION,
    bundle_document,
    read_curves,
    read_metadata,
    read_report_rows,
    render,
    report_row,
    write_reports,
)


def sample_report(label="ideal", saving=0.4):
    return EstimateReport(label, 100, 10, -1.25, 4e-4, 0.02, -1.25, 3.0, 1.5, saving, 0.015)


class TestRender(unittest.TestCase):
    def test_csv_header_and_na(self):
        text = render([report_row(sample_report(saving=None))], "csv")
        lines = text.splitlines()
        self.assertEqual(lines[0], ",".join(REPORT_COLUMNS))
        self.assertTrue(lines[1].startswith("ideal,100,10,"))
        self.assertTrue(lines[1].endswith(",NA"))

    def test_json_document(self):
        curve = pd.DataFrame({"shots": [10, 1000], "settings": [1, 100], "standard_error": [np.nan, 0.02]})
        document = json.loads(render([report_row(sample_report())], "json", {"ideal": curve}, {"seed": 7}))
        self.assertEqual(document["schema_version"], SCHEMA_VERSION)
        self.assertEqual(document["seed"], 7)
        self.assertEqual(document["reports"][0]["saving_factor"], 0.4)
        self.assertIsNone(document["curves"]["ideal"][0]["standard_error"])

    def test_json_null_for_missing(self):
        document = json.loads(render([report_row(sample_report(saving=None))], "json"))
        self.assertIsNone(document["reports"][0]["saving_factor"])
        self.assertEqual(document["curves"], {})

    def test_empty_rows(self):
        with self.assertRaises(ReportError):
            render([], "csv")

    def test_unknown_format(self):
        with self.assertRaises(ReportError):
            render([report_row(sample_report())], "xml")


class TestBundleFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_write_and_read_back(self):
        curve = pd.DataFrame({"shots": [10, 1000], "settings": [1, 100], "mean": [-1.0, -1.2],
                              "standard_error": [np.nan, 0.02]})
        reports = [sample_report(), sample_report("qdt", None)]
        write_reports(self.tmp.name, reports, {"ideal": curve}, {"label": "trial", "primary": "qdt"})

        for name in ("reports.csv", "reports.json", "curve_ideal.csv"):
            self.assertTrue(os.path.isfile(os.path.join(self.tmp.name, name)))

        rows = read_report_rows(self.tmp.name)
        self.assertEqual([r["label"] for r in rows], ["ideal", "qdt"])
        self.assertIsNone(rows[1]["saving_factor"])
        self.assertAlmostEqual(rows[0]["mean"], -1.25)

        curves = read_curves(self.tmp.name)
        self.assertEqual(list(curves), ["ideal"])
        self.assertTrue(np.isnan(curves["ideal"]["standard_error"].iloc[0]))
        self.assertEqual(read_metadata(self.tmp.name)["primary"], "qdt")

    def test_bundle_document_rerenders(self):
        write_reports(self.tmp.name, [sample_report()], {}, {"label": "trial"})
        with open(os.path.join(self.tmp.name, "reports.csv"), 'r', encoding='utf-8') as f:
            written = f.read()
        self.assertEqual(bundle_document(self.tmp.name, "csv"), written)
        document = json.loads(bundle_document(self.tmp.name, "json"))
        self.assertEqual(document["label"], "trial")

    def test_missing_bundle(self):
        with self.assertRaises(ReportError):
            bundle_document(os.path.join(self.tmp.name, "absent"), "csv")
        with self.assertRaises(ReportError):
            read_report_rows(self.tmp.name)

    def test_metadata_without_json(self):
        self.assertEqual(read_metadata(self.tmp.name), {})


if __name__ == '__main__':
    unittest.main()
