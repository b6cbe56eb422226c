"""Report documents for experiment bundles: CSV rows, schema-versioned JSON and curve tables."""
import glob
import io
import json
import math
import os
from typing import Dict, List, Optional, Sequence

import pandas as pd

from src.errors import ReportError
from src.processors.estimator import EstimateReport

SCHEMA_VERSION = 1
REPORT_COLUMNS = ["label", "S", "T", "mean", "variance", "std_err", "abs_err", "saving_factor"]
FORMATS = ("csv", "json")

REPORTS_CSV = "reports.csv"
REPORTS_JSON = "reports.json"
CURVE_PREFIX = "curve_"


def report_row(report: EstimateReport) -> Dict:
    return {
        "label": report.label,
        "S": report.settings,
        "T": report.shots_per_setting,
        "mean": report.mean,
        "variance": report.variance,
        "std_err": report.standard_error,
        "abs_err": report.absolute_error,
        "saving_factor": report.saving_factor,
    }


def _clean(value):
    if value is None:
        return None
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def rows_frame(rows: Sequence[Dict]) -> pd.DataFrame:
    return pd.DataFrame([{k: row.get(k) for k in REPORT_COLUMNS} for row in rows], columns=REPORT_COLUMNS)


def render_csv(rows: Sequence[Dict]) -> str:
    buffer = io.StringIO()
    rows_frame(rows).to_csv(buffer, index=False, na_rep="NA", lineterminator="\n")
    return buffer.getvalue()


def render_json(rows: Sequence[Dict], curves: Optional[Dict[str, pd.DataFrame]] = None,
                metadata: Optional[Dict] = None) -> str:
    document = {
        "schema_version": SCHEMA_VERSION,
        **(metadata or {}),
        "reports": [{k: _clean(row.get(k)) for k in REPORT_COLUMNS} for row in rows],
        "curves": {
            label: [{k: _clean(v) for k, v in record.items()} for record in frame.to_dict(orient="records")]
            for label, frame in sorted((curves or {}).items())
        },
    }
    return json.dumps(document, indent=2) + "\n"


def render(rows: Sequence[Dict], fmt: str, curves: Optional[Dict[str, pd.DataFrame]] = None,
           metadata: Optional[Dict] = None) -> str:
    if not rows:
        raise ReportError("Bundle contains no reports")
    if fmt == "csv":
        return render_csv(rows)
    if fmt == "json":
        return render_json(rows, curves, metadata)
    raise ReportError(f"Unknown report format '{fmt}' (expected one of {', '.join(FORMATS)})")


def write_reports(directory: str, reports: Sequence[EstimateReport], curves: Dict[str, pd.DataFrame],
                  metadata: Optional[Dict] = None):
    rows = [report_row(r) for r in reports]
    with open(os.path.join(directory, REPORTS_CSV), 'w', encoding='utf-8', newline='') as f:
        f.write(render(rows, "csv"))
    with open(os.path.join(directory, REPORTS_JSON), 'w', encoding='utf-8', newline='') as f:
        f.write(render(rows, "json", curves, metadata))
    for label, frame in curves.items():
        frame.to_csv(os.path.join(directory, f"{CURVE_PREFIX}{label}.csv"), index=False, na_rep="NA",
                     lineterminator="\n")


def read_report_rows(directory: str) -> List[Dict]:
    path = os.path.join(directory, REPORTS_CSV)
    if not os.path.isfile(path):
        raise ReportError(f"No {REPORTS_CSV} in {directory}")
    frame = pd.read_csv(path, na_values=["NA"], keep_default_na=False)
    if frame.empty:
        raise ReportError(f"{path} contains no reports")
    return [{k: _clean(v) for k, v in record.items()} for record in frame.to_dict(orient="records")]


def read_curves(directory: str) -> Dict[str, pd.DataFrame]:
    curves = {}
    for path in sorted(glob.glob(os.path.join(directory, f"{CURVE_PREFIX}*.csv"))):
        label = os.path.basename(path)[len(CURVE_PREFIX):-len(".csv")]
        curves[label] = pd.read_csv(path, na_values=["NA"], keep_default_na=False)
    return curves


def read_metadata(directory: str) -> Dict:
    path = os.path.join(directory, REPORTS_JSON)
    if not os.path.isfile(path):
        return {}
    with open(path, 'r', encoding='utf-8') as f:
        document = json.load(f)
    return {k: v for k, v in document.items() if k not in ("reports", "curves")}


def bundle_document(directory: str, fmt: str) -> str:
    """Re-render a written bundle's reports in the requested format."""
    if not os.path.isdir(directory):
        raise ReportError(f"Bundle directory not found: {directory}")
    rows = read_report_rows(directory)
    return render(rows, fmt, read_curves(directory), read_metadata(directory))
