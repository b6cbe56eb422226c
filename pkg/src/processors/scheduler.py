"""
Job schedules for experiment and detector-tomography circuits, and
per-job drift monitoring of the resulting shot streams.

A job occupies one fixed wall-time slot; every circuit in it is stamped
with the slot start.
"""
import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.errors import DimensionMismatchError, ScheduleError
from src.logger import setup_logger
from src.processors.qdt import OutcomeTally, qdt_circuit_list
from src.utils import BASIS_LABELS

logger = setup_logger("Scheduler")

EXPERIMENT = "experiment"
QDT = "qdt"
BLENDED = "blended"
LEADING = "leading"


@dataclass(frozen=True)
class JobCaps:
    circuits_per_job: int = 300
    shots_per_circuit: int = 100

    def __post_init__(self):
        if self.circuits_per_job < 1 or self.shots_per_circuit < 1:
            raise ScheduleError(f"Caps must be >= 1, got {self}")


@dataclass(frozen=True)
class CircuitRef:
    """
    One circuit execution. `circuit_id` is the setting index for experiment
    circuits and the position in qdt_circuit_list() for tomography circuits.
    """

    kind: Literal["experiment", "qdt"]
    circuit_id: int
    shots: int
    group: str = BLENDED

    @property
    def label(self) -> str:
        if self.kind == EXPERIMENT:
            return str(self.circuit_id)
        input_label, basis = qdt_circuit_list()[self.circuit_id]
        return f"{input_label}/{basis}"


@dataclass
class Job:
    index: int
    slot_start: float
    circuits: List[CircuitRef] = field(default_factory=list)

    def shots(self, kind: Optional[str] = None) -> int:
        return sum(c.shots for c in self.circuits if kind is None or c.kind == kind)


@dataclass
class Schedule:
    jobs: List[Job]
    mode: Literal["regular", "blended"]
    slot_seconds: float = 10.0

    @property
    def duration(self) -> float:
        return max(len(self.jobs), 1) * self.slot_seconds

    def total_shots(self, kind: Optional[str] = None) -> int:
        return sum(job.shots(kind) for job in self.jobs)

    def qdt_shots_per_circuit(self, group: Optional[str] = None) -> np.ndarray:
        totals = np.zeros(len(qdt_circuit_list()), dtype=np.int64)
        for job in self.jobs:
            for c in job.circuits:
                if c.kind == QDT and (group is None or c.group == group):
                    totals[c.circuit_id] += c.shots
        return totals

    def experiment_shots(self) -> dict:
        totals = {}
        for job in self.jobs:
            for c in job.circuits:
                if c.kind == EXPERIMENT:
                    totals[c.circuit_id] = totals.get(c.circuit_id, 0) + c.shots
        return totals

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"job": job.index, "slot_start": job.slot_start, "circuit_kind": c.kind,
             "circuit_id": c.label, "shots": c.shots}
            for job in self.jobs for c in job.circuits
        ]
        return pd.DataFrame(rows, columns=["job", "slot_start", "circuit_kind", "circuit_id", "shots"])


def split_shots(shots: int, cap: int) -> List[int]:
    """Instance sizes for one circuit whose shots exceed the per-circuit cap."""
    if shots < 1:
        raise ScheduleError(f"Circuit needs at least one shot, got {shots}")
    pieces = math.ceil(shots / cap)
    base, extra = divmod(shots, pieces)
    return [base + 1] * extra + [base] * (pieces - extra)


def _experiment_circuits(experiment_shots: Sequence[int], caps: JobCaps) -> List[CircuitRef]:
    return [
        CircuitRef(EXPERIMENT, index, piece)
        for index, shots in enumerate(experiment_shots)
        for piece in split_shots(int(shots), caps.shots_per_circuit)
    ]


def _qdt_circuits(shots_per_circuit: int, caps: JobCaps, group: str) -> List[CircuitRef]:
    return [
        CircuitRef(QDT, cid, piece, group)
        for cid in range(len(qdt_circuit_list()))
        for piece in split_shots(shots_per_circuit, caps.shots_per_circuit)
    ]


def _pack(circuits: List[CircuitRef], cap: int) -> List[List[CircuitRef]]:
    return [circuits[i:i + cap] for i in range(0, len(circuits), cap)]


def interleave(experiments: Sequence[CircuitRef], calibration: Sequence[CircuitRef]) -> List[CircuitRef]:
    """Spread calibration circuits evenly through the experiment sequence, keeping both orders."""
    total = len(experiments) + len(calibration)
    out, placed, e = [], 0, 0
    for i in range(total):
        if placed < (i + 1) * len(calibration) // total:
            out.append(calibration[placed])
            placed += 1
        else:
            out.append(experiments[e])
            e += 1
    return out


def _numbered(groups: List[List[CircuitRef]], slot_seconds: float) -> List[Job]:
    return [Job(i, i * slot_seconds, circuits) for i, circuits in enumerate(groups)]


def blended_schedule(experiment_shots: Sequence[int], qdt_repeats_per_job: int, qdt_shots_per_instance: int,
                     caps: JobCaps = JobCaps(), baseline_shots: int = 0,
                     slot_seconds: float = 10.0) -> Schedule:
    """
    Every job carries `qdt_repeats_per_job` copies of all twelve tomography
    circuits spread among its experiment circuits. Experiment circuits keep
    plan order and are shared out as evenly as the job count allows.

    `baseline_shots` > 0 prepends non-blended tomography jobs (group "leading").
    """
    if qdt_repeats_per_job < 1:
        raise ScheduleError("Blended scheduling needs at least one tomography repeat per job")
    if qdt_shots_per_instance < 1 or qdt_shots_per_instance > caps.shots_per_circuit:
        raise ScheduleError(
            f"Tomography instances of {qdt_shots_per_instance} shots violate the cap {caps.shots_per_circuit}"
        )
    per_job_qdt = len(qdt_circuit_list()) * qdt_repeats_per_job
    room = caps.circuits_per_job - per_job_qdt
    if room < 1:
        raise ScheduleError(
            f"Caps of {caps.circuits_per_job} circuits per job cannot hold {per_job_qdt} tomography "
            f"circuits plus an experiment circuit"
        )

    experiments = _experiment_circuits(experiment_shots, caps)
    num_jobs = max(1, math.ceil(len(experiments) / room))
    calibration = [
        CircuitRef(QDT, cid, qdt_shots_per_instance)
        for _ in range(qdt_repeats_per_job)
        for cid in range(len(qdt_circuit_list()))
    ]

    groups = []
    if baseline_shots > 0:
        groups.extend(_pack(_qdt_circuits(int(baseline_shots), caps, LEADING), caps.circuits_per_job))
    for j in range(num_jobs):
        start = j * len(experiments) // num_jobs
        stop = (j + 1) * len(experiments) // num_jobs
        groups.append(interleave(experiments[start:stop], calibration))

    schedule = Schedule(_numbered(groups, slot_seconds), "blended", slot_seconds)
    logger.info(
        f"Blended schedule: {len(schedule.jobs)} jobs, {len(experiments)} experiment circuits, "
        f"{schedule.total_shots(QDT)} tomography shots"
    )
    return schedule


def regular_schedule(experiment_shots: Sequence[int], qdt_shots: int, caps: JobCaps = JobCaps(),
                     slot_seconds: float = 10.0) -> Schedule:
    """All tomography circuits (`qdt_shots` each) in leading jobs, then the experiment jobs."""
    groups = []
    if qdt_shots > 0:
        groups.extend(_pack(_qdt_circuits(int(qdt_shots), caps, LEADING), caps.circuits_per_job))
    groups.extend(_pack(_experiment_circuits(experiment_shots, caps), caps.circuits_per_job))
    if not groups:
        raise ScheduleError("Nothing to schedule")

    schedule = Schedule(_numbered(groups, slot_seconds), "regular", slot_seconds)
    logger.info(
        f"Regular schedule: {len(schedule.jobs)} jobs, {schedule.total_shots(QDT)} tomography shots up front"
    )
    return schedule


def _sigma(p: float, n: int) -> float:
    return math.sqrt(p * (1 - p) / n)


def drift_monitor(blocks: Sequence, qubit: int, basis: Union[str, int], expected_outcome: int,
                  schedule: Optional[Schedule] = None) -> pd.DataFrame:
    """
    Per-job frequency of `expected_outcome` on one qubit over the shots that
    measured it in `basis`, with its binomial standard error.

    `blocks` may mix experiment SettingBlocks and tomography records. Jobs
    without matching shots are kept and flagged as gaps; with a schedule
    every job of it is listed.
    """
    b = basis if isinstance(basis, int) else BASIS_LABELS.index(basis)
    hits, shots, times = {}, {}, {}
    for block in blocks:
        if not 0 <= qubit < block.num_qubits:
            raise DimensionMismatchError(f"Qubit {qubit} outside a {block.num_qubits}-qubit block")
        times.setdefault(block.job_index, block.timestamp)
        counts = block.qubit_counts(qubit, b)
        if counts is None:
            continue
        hits[block.job_index] = hits.get(block.job_index, 0) + int(counts[expected_outcome])
        shots[block.job_index] = shots.get(block.job_index, 0) + int(counts.sum())

    if schedule is not None:
        jobs = [(job.index, job.slot_start) for job in schedule.jobs]
    else:
        jobs = sorted(times.items())

    rows = []
    for job, time in jobs:
        n = shots.get(job, 0)
        if n == 0:
            rows.append({"job": job, "time": time, "frequency": np.nan, "sigma": np.nan, "shots": 0, "gap": True})
            continue
        p = hits[job] / n
        rows.append({"job": job, "time": time, "frequency": p, "sigma": _sigma(p, n), "shots": n, "gap": False})

    frame = pd.DataFrame(rows, columns=["job", "time", "frequency", "sigma", "shots", "gap"])
    gaps = int(frame["gap"].sum())
    if gaps:
        logger.warning(f"Drift monitor: {gaps} job(s) without shots on qubit {qubit}, basis {BASIS_LABELS[b]}")
    return frame.sort_values(["time", "job"], kind="stable").reset_index(drop=True)


def compare_qdt_consistency(blended: OutcomeTally, non_blended: OutcomeTally, experiment: OutcomeTally,
                            outcome: int = 0, threshold_sigma: float = 3.0) -> pd.DataFrame:
    """
    Pairwise frequency gaps between the three tallies, flagged above
    `threshold_sigma` combined sigma. A pair with a zero-shot side cannot be
    checked and is flagged with `empty` set.
    """
    tallies = {"blended": blended, "non_blended": non_blended, "experiment": experiment}
    pairs = [("blended", "experiment"), ("non_blended", "experiment"), ("blended", "non_blended")]

    rows = []
    for a, b in pairs:
        ta, tb = tallies[a], tallies[b]
        row = {"pair": f"{a}-{b}", "frequency_a": np.nan, "frequency_b": np.nan,
               "gap": np.nan, "sigma": np.nan, "flagged": True, "empty": ta.empty or tb.empty}
        if not row["empty"]:
            fa, fb = ta.frequency(outcome), tb.frequency(outcome)
            sigma = math.hypot(_sigma(fa, ta.shots), _sigma(fb, tb.shots))
            gap = abs(fa - fb)
            row.update(frequency_a=fa, frequency_b=fb, gap=gap, sigma=sigma,
                       flagged=bool(gap > threshold_sigma * sigma))
        rows.append(row)
    return pd.DataFrame(rows, columns=["pair", "frequency_a", "frequency_b", "gap", "sigma", "flagged", "empty"])
