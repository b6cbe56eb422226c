"""
Shot sampling for product states under a DetectorModel, driven by a Schedule.

Each circuit execution draws from its own counter-based stream keyed by
(seed, job, position), so the output does not depend on how jobs are
spread over workers.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.errors import DimensionMismatchError, ScheduleError, SimulationError
from src.logger import setup_logger
from src.processors.detector_noise import DetectorModel
from src.processors.pauli_algebra import ProductState
from src.processors.povm_frames import BasisDistribution
from src.processors.qdt import qdt_circuit_list
from src.processors.scheduler import EXPERIMENT, JobCaps, Schedule
from src.utils import (
    BASIS_LABELS,
    STREAM_SETTINGS,
    circuit_rng,
    derived_seed,
    setting_from_string,
    setting_to_string,
)

logger = setup_logger("ShotSimulator")

SHOT_COLUMNS = ["job", "timestamp", "setting", "outcome", "count", "setting_index"]
QDT_COLUMNS = ["job", "timestamp", "group", "input", "basis", "qubit", "outcome", "count"]


class ExperimentPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    settings: int = Field(ge=1)
    shots: int = Field(ge=1)
    circuits_per_job: int = Field(default=300, ge=1)
    shots_per_circuit: int = Field(default=100, ge=1)
    seed: int = 0

    @property
    def caps(self) -> JobCaps:
        return JobCaps(self.circuits_per_job, self.shots_per_circuit)

    @property
    def total_shots(self) -> int:
        return self.settings * self.shots


@dataclass
class SettingBlock:
    """Outcomes of one circuit execution of a measurement setting."""

    setting: np.ndarray  # (n,) basis indices
    outcomes: np.ndarray  # (shots, n) bits
    job_index: int
    timestamp: float
    setting_index: int
    position: int = 0

    def __post_init__(self):
        self.setting = np.asarray(self.setting, dtype=np.int8)
        self.outcomes = np.asarray(self.outcomes, dtype=np.uint8)
        if self.outcomes.ndim != 2 or self.outcomes.shape[0] == 0:
            raise SimulationError("A setting block needs at least one shot")
        if self.outcomes.shape[1] != self.setting.size:
            raise DimensionMismatchError(
                f"Outcomes on {self.outcomes.shape[1]} qubits for a {self.setting.size}-qubit setting"
            )

    @property
    def shots(self) -> int:
        return self.outcomes.shape[0]

    @property
    def num_qubits(self) -> int:
        return self.setting.size

    def qubit_counts(self, qubit: int, basis: int) -> Optional[np.ndarray]:
        if self.setting[qubit] != basis:
            return None
        ones = int(np.count_nonzero(self.outcomes[:, qubit]))
        return np.array([self.shots - ones, ones])


@dataclass
class QdtRecord:
    """Per-qubit outcome counts of one tomography circuit execution."""

    job_index: int
    timestamp: float
    group: str
    input_label: str
    basis: str
    counts: np.ndarray  # (n, 2)
    position: int = 0

    @property
    def num_qubits(self) -> int:
        return len(self.counts)

    def qubit_counts(self, qubit: int, basis: int) -> Optional[np.ndarray]:
        if self.basis != BASIS_LABELS[basis]:
            return None
        return np.asarray(self.counts[qubit])


@dataclass
class SimulationResult:
    blocks: List[SettingBlock] = field(default_factory=list)
    qdt_records: List[QdtRecord] = field(default_factory=list)


def sample_settings(dists: Sequence[BasisDistribution], num_settings: int, seed: int) -> np.ndarray:
    """(S, n) basis indices, each qubit drawn independently from its distribution."""
    if num_settings < 1:
        raise ValueError(f"Need at least one setting, got {num_settings}")
    rng = np.random.default_rng(derived_seed(seed, STREAM_SETTINGS))
    columns = [rng.choice(3, size=num_settings, p=d.as_array()) for d in dists]
    return np.stack(columns, axis=1).astype(np.int8)


def _sample_circuit(expectations: np.ndarray, setting: np.ndarray, shots: int,
                    matrices: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Born-rule outcome in the setting's basis, then the reported bit drawn
    from the assignment matrix column of that outcome.
    """
    qubits = np.arange(setting.size)
    p0 = 0.5 * (1.0 + expectations[qubits, setting + 1])
    draws = rng.random((shots, setting.size, 2))
    ideal = (draws[:, :, 0] >= p0).astype(np.intp)
    report_one = matrices[qubits, setting][qubits, 1, ideal]
    return (draws[:, :, 1] < report_one).astype(np.uint8)


def _ones_to_counts(outcomes: np.ndarray) -> np.ndarray:
    ones = np.count_nonzero(outcomes, axis=0)
    return np.stack([outcomes.shape[0] - ones, ones], axis=1).astype(np.int64)


def simulate_qdt_shots(input_label: str, basis: Union[str, int], shots: int, model: DetectorModel,
                       timestamp: float = 0.0, seed: int = 0, job: int = 0, position: int = 0) -> np.ndarray:
    """(n, 2) outcome counts with the same input state prepared on every qubit."""
    b = basis if isinstance(basis, int) else BASIS_LABELS.index(basis)
    n = model.num_qubits
    expectations = ProductState.from_labels([input_label] * n).pauli_expectations()
    matrices = model.assignment_tensor([timestamp])[0]
    outcomes = _sample_circuit(expectations, np.full(n, b, dtype=np.intp), shots, matrices,
                               circuit_rng(seed, job, position))
    return _ones_to_counts(outcomes)


def simulate_schedule(state: ProductState, settings: np.ndarray, model: DetectorModel, schedule: Schedule,
                      seed: int, workers: int = 1) -> SimulationResult:
    """Run every circuit of the schedule; output keeps schedule order."""
    settings = np.asarray(settings, dtype=np.int8)
    n = state.num_qubits
    if model.num_qubits != n or (settings.size and settings.shape[1] != n):
        raise DimensionMismatchError(
            f"State on {n} qubits, detector on {model.num_qubits}, settings on {settings.shape[-1]}"
        )
    expectations = state.pauli_expectations()
    assignment = model.assignment_tensor([job.slot_start for job in schedule.jobs])
    circuits = qdt_circuit_list()
    qdt_expectations = {
        label: ProductState.from_labels([label] * n).pauli_expectations() for label in {c[0] for c in circuits}
    }

    def run_job(j):
        job = schedule.jobs[j]
        blocks, records = [], []
        for position, circuit in enumerate(job.circuits):
            rng = circuit_rng(seed, job.index, position)
            if circuit.kind == EXPERIMENT:
                if not 0 <= circuit.circuit_id < len(settings):
                    raise ScheduleError(f"Job {job.index} references unknown setting {circuit.circuit_id}")
                setting = settings[circuit.circuit_id]
                outcomes = _sample_circuit(expectations, setting.astype(np.intp), circuit.shots, assignment[j], rng)
                blocks.append(SettingBlock(setting, outcomes, job.index, job.slot_start, circuit.circuit_id, position))
            else:
                label, basis = circuits[circuit.circuit_id]
                b = BASIS_LABELS.index(basis)
                outcomes = _sample_circuit(qdt_expectations[label], np.full(n, b, dtype=np.intp),
                                           circuit.shots, assignment[j], rng)
                records.append(QdtRecord(job.index, job.slot_start, circuit.group, label, basis,
                                         _ones_to_counts(outcomes), position))
        return blocks, records

    if workers > 1 and len(schedule.jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(run_job, range(len(schedule.jobs))))
    else:
        parts = [run_job(j) for j in range(len(schedule.jobs))]

    result = SimulationResult()
    for blocks, records in parts:
        result.blocks.extend(blocks)
        result.qdt_records.extend(records)
    logger.info(
        f"Simulated {len(schedule.jobs)} jobs: {len(result.blocks)} experiment circuits, "
        f"{len(result.qdt_records)} tomography circuits"
    )
    return result


def simulate_shots(state: ProductState, settings: np.ndarray, shots: int, model: DetectorModel,
                   schedule: Schedule, seed: int, workers: int = 1) -> List[SettingBlock]:
    """Experiment blocks only; the schedule must give every setting exactly `shots` shots."""
    planned = schedule.experiment_shots()
    expected = {i: shots for i in range(len(settings))}
    if planned != expected:
        raise ScheduleError(
            f"Schedule covers {len(planned)} settings with {sum(planned.values())} shots; "
            f"plan needs {len(settings)} settings x {shots} shots"
        )
    return simulate_schedule(state, settings, model, schedule, seed, workers).blocks


def unique_rows(groups: np.ndarray, outcomes: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Distinct (group, outcome row) pairs with multiplicities, sorted by group
    then by outcome bits (qubit 0 most significant).
    """
    groups = np.asarray(groups, dtype=np.int64)
    outcomes = np.asarray(outcomes, dtype=np.uint8)
    n = outcomes.shape[1]
    group_bits = int(groups.max()).bit_length() if groups.size else 0
    if n + group_bits <= 62:
        shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
        packed = (outcomes.astype(np.int64) << shifts).sum(axis=1) if n else np.zeros(len(groups), np.int64)
        keys, counts = np.unique((groups << n) | packed, return_counts=True)
        bits = ((keys[:, None] & ((1 << n) - 1)) >> shifts) & 1
        return keys >> n, bits.astype(np.uint8), counts
    table = np.column_stack([groups, outcomes.astype(np.int64)])
    rows, counts = np.unique(table, axis=0, return_counts=True)
    return rows[:, 0], rows[:, 1:].astype(np.uint8), counts


def shot_frame(blocks: Sequence[SettingBlock]) -> pd.DataFrame:
    """Shot stream rows, one per distinct outcome of each block, in block order."""
    if not blocks:
        return pd.DataFrame(columns=SHOT_COLUMNS)
    sizes = np.array([b.shots for b in blocks])
    block_ids = np.repeat(np.arange(len(blocks)), sizes)
    ids, bits, counts = unique_rows(block_ids, np.concatenate([b.outcomes for b in blocks]))
    n = bits.shape[1]
    strings = (bits + ord("0")).astype(np.uint8).view(f"S{n}").ravel().astype(str) if n else np.full(len(ids), "")
    return pd.DataFrame({
        "job": [blocks[i].job_index for i in ids],
        "timestamp": [blocks[i].timestamp for i in ids],
        "setting": [setting_to_string(blocks[i].setting) for i in ids],
        "outcome": strings,
        "count": counts,
        "setting_index": [blocks[i].setting_index for i in ids],
    }, columns=SHOT_COLUMNS)


def write_shot_stream(blocks: Sequence[SettingBlock], path: str):
    shot_frame(blocks).to_csv(path, index=False)


def read_shot_stream(path: str) -> List[SettingBlock]:
    """Rebuild blocks from a shot stream; positions follow row order within each job."""
    frame = pd.read_csv(path, dtype={"setting": str, "outcome": str}, keep_default_na=False)
    if frame.empty:
        return []
    n = len(frame["setting"].iloc[0])
    bits = (frame["outcome"].to_numpy().astype(f"S{n}").view(np.uint8).reshape(-1, n) - ord("0")).astype(np.uint8)
    counts = frame["count"].to_numpy(dtype=np.int64)
    jobs = frame["job"].to_numpy()
    indices = frame["setting_index"].to_numpy()
    changed = (jobs[1:] != jobs[:-1]) | (indices[1:] != indices[:-1])
    boundaries = np.concatenate([[0], np.flatnonzero(changed) + 1, [len(frame)]])

    blocks, positions = [], {}
    for start, stop in zip(boundaries[:-1], boundaries[1:]):
        job = int(jobs[start])
        position = positions.get(job, 0)
        positions[job] = position + 1
        outcomes = np.repeat(bits[start:stop], counts[start:stop], axis=0)
        blocks.append(SettingBlock(setting_from_string(frame["setting"].iat[start]), outcomes, job,
                                   float(frame["timestamp"].iat[start]), int(indices[start]), position))
    return blocks


def qdt_frame(records: Sequence[QdtRecord]) -> pd.DataFrame:
    rows = [
        {"job": r.job_index, "timestamp": r.timestamp, "group": r.group, "input": r.input_label,
         "basis": r.basis, "qubit": q, "outcome": outcome, "count": int(r.counts[q, outcome])}
        for r in records for q in range(r.counts.shape[0]) for outcome in (0, 1)
    ]
    return pd.DataFrame(rows, columns=QDT_COLUMNS)


def write_qdt_records(records: Sequence[QdtRecord], path: str):
    qdt_frame(records).to_csv(path, index=False)


def read_qdt_records(path: str) -> List[QdtRecord]:
    frame = pd.read_csv(path, dtype={"input": str, "basis": str, "group": str}, keep_default_na=False)
    if frame.empty:
        return []
    width = 2 * (int(frame["qubit"].max()) + 1)
    if len(frame) % width:
        raise SimulationError(f"Tomography record file {path} has a partial record")
    records, positions = [], {}
    for start in range(0, len(frame), width):
        chunk = frame.iloc[start:start + width]
        first = chunk.iloc[0]
        counts = chunk["count"].to_numpy(dtype=np.int64).reshape(-1, 2)
        job = int(first["job"])
        position = positions.get(job, 0)
        positions[job] = position + 1
        records.append(QdtRecord(job, float(first["timestamp"]), str(first["group"]), str(first["input"]),
                                 str(first["basis"]), counts, position))
    return records


def born_probabilities(state: ProductState, setting: Sequence[int]) -> np.ndarray:
    """Noiseless joint outcome distribution of one setting, indexed by the outcome bits as a binary number."""
    expectations = state.pauli_expectations()
    joint = np.ones(1)
    for q, b in enumerate(setting):
        p0 = 0.5 * (1.0 + expectations[q, int(b) + 1])
        joint = np.kron(joint, [p0, 1.0 - p0])
    return joint


