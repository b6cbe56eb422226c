"""
Parallel single-qubit detector tomography.

Twelve circuits (four input states times three measurement bases) are run
on every qubit at once. Per qubit and basis the binary detector
{M_0, M_1 = I - M_0} is fitted by maximum likelihood; the six-outcome POVM
is then p_B * M_{B,b} for whatever basis distribution the experiment uses.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator

from src.errors import DegenerateDataError, DimensionMismatchError, TomographyError
from src.logger import setup_logger
from src.processors.pauli_algebra import LABEL_VECTORS, PAULI_MATRICES
from src.processors.povm_frames import BasisDistribution, LocalPovm, eigenprojector
from src.utils import BASIS_LABELS

logger = setup_logger("Qdt")

QDT_INPUTS = ("0", "1", "+", "+y")
IDENTITY = np.eye(2, dtype=complex)
_TINY = 1e-300


def qdt_circuit_list() -> List[Tuple[str, str]]:
    """The twelve (input_label, basis) circuits, input-major."""
    return [(label, basis) for label in QDT_INPUTS for basis in BASIS_LABELS]


def ideal_input_states() -> np.ndarray:
    vectors = [LABEL_VECTORS[label] for label in QDT_INPUTS]
    return np.stack([np.outer(v, np.conj(v)) for v in vectors])


class RecoverySettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_iterations: int = 2000
    tolerance: float = 1e-12
    # Frobenius norm of an undamped update below which the ascent counts as settled
    step_tolerance: float = 1e-9
    psd_tolerance: float = 1e-9
    initial_dilution: float = 1.0
    # mixing towards I/2 of the ideal start; rank-one starts never leave the boundary
    start_depolarization: float = 0.05

    @field_validator("tolerance", "step_tolerance", "psd_tolerance", "initial_dilution")
    @classmethod
    def _positive(cls, value):
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @field_validator("max_iterations")
    @classmethod
    def _at_least_one(cls, value):
        if value < 1:
            raise ValueError("max_iterations must be >= 1")
        return value


class TomographyData:
    """
    counts[qubit, input, basis, outcome]; fractional counts are allowed so
    exact probabilities can be fed in. `input_states` overrides the four
    ideal input density matrices.
    """

    def __init__(self, counts, input_states: Optional[np.ndarray] = None):
        arr = np.array(counts, dtype=float)
        if arr.ndim != 4 or arr.shape[1:] != (len(QDT_INPUTS), 3, 2):
            raise DimensionMismatchError(f"Tomography counts must have shape (n, 4, 3, 2), got {arr.shape}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise TomographyError("Tomography counts must be finite and non-negative")
        self.counts = arr
        self.input_states = ideal_input_states() if input_states is None else np.asarray(input_states, dtype=complex)
        if self.input_states.shape != (len(QDT_INPUTS), 2, 2):
            raise DimensionMismatchError("input_states must be four 2x2 density matrices")

    @classmethod
    def empty(cls, num_qubits: int) -> "TomographyData":
        return cls(np.zeros((num_qubits, len(QDT_INPUTS), 3, 2)))

    @property
    def num_qubits(self) -> int:
        return self.counts.shape[0]

    def totals(self) -> np.ndarray:
        """Shots per (qubit, input, basis)."""
        return self.counts.sum(axis=-1)

    def add(self, input_label: str, basis: Union[str, int], qubit_counts: np.ndarray):
        """Accumulate one circuit's (n, 2) per-qubit outcome counts."""
        i = QDT_INPUTS.index(input_label)
        b = basis if isinstance(basis, int) else BASIS_LABELS.index(basis)
        self.counts[:, i, b, :] += np.asarray(qubit_counts, dtype=float)

    @classmethod
    def from_records(cls, records: Iterable, num_qubits: int, group: Optional[str] = None) -> "TomographyData":
        data = cls.empty(num_qubits)
        for record in records:
            if group is None or record.group == group:
                data.add(record.input_label, record.basis, record.counts)
        return data

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for q in range(self.num_qubits):
            for i, label in enumerate(QDT_INPUTS):
                for b, basis in enumerate(BASIS_LABELS):
                    for outcome in (0, 1):
                        count = self.counts[q, i, b, outcome]
                        rows.append({"qubit": q, "input": label, "basis": basis, "outcome": outcome,
                                     "count": int(count) if float(count).is_integer() else float(count)})
        return pd.DataFrame(rows, columns=["qubit", "input", "basis", "outcome", "count"])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "TomographyData":
        num_qubits = int(frame["qubit"].max()) + 1 if len(frame) else 0
        data = cls.empty(num_qubits)
        for row in frame.itertuples(index=False):
            i = QDT_INPUTS.index(str(row.input))
            b = BASIS_LABELS.index(str(row.basis))
            data.counts[int(row.qubit), i, b, int(row.outcome)] += float(row.count)
        return data

    def save(self, path: str):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def load(cls, path: str) -> "TomographyData":
        return cls.from_frame(pd.read_csv(path, dtype={"input": str}, keep_default_na=False))


def exact_tomography_data(povms: Sequence[LocalPovm], shots: float = 1.0,
                          input_states: Optional[np.ndarray] = None) -> TomographyData:
    """Expected counts that the given detectors would produce, `shots` per circuit."""
    states = ideal_input_states() if input_states is None else input_states
    counts = np.zeros((len(povms), len(QDT_INPUTS), 3, 2))
    for q, povm in enumerate(povms):
        binary = povm.effects.reshape(3, 2, 2, 2) / povm.basis_probabilities[:, None, None, None]
        counts[q] = shots * np.real(np.einsum("Bbij,nji->nBb", binary, states))
    return TomographyData(np.clip(counts, 0.0, None), input_states=input_states)


@dataclass
class QdtFit:
    """Maximum-likelihood detector for one qubit."""

    measurements: np.ndarray  # (3 bases, 2 outcomes, 2, 2)
    povm: LocalPovm
    converged: bool
    iterations: int
    log_likelihood: float
    history: List[float] = field(default_factory=list)

    def povm_for(self, dist: Union[BasisDistribution, Sequence[float]]) -> LocalPovm:
        """Re-weight the binary detectors for another basis distribution."""
        probs = dist.as_array() if isinstance(dist, BasisDistribution) else np.asarray(dist, dtype=float)
        return LocalPovm((probs[:, None, None, None] * self.measurements).reshape(6, 2, 2), basis_probabilities=probs)


def _log_likelihood(counts: np.ndarray, probabilities: np.ndarray) -> float:
    mask = counts > 0
    if np.any(probabilities[mask] <= 0):
        return -np.inf
    return float(np.sum(counts[mask] * np.log(probabilities[mask])))


def _binary_probabilities(states: np.ndarray, m0: np.ndarray) -> np.ndarray:
    p0 = np.real(np.einsum("ij,nji->n", m0, states))
    return np.stack([p0, 1.0 - p0], axis=1)


def _linear_inversion(states: np.ndarray, frequencies: np.ndarray) -> np.ndarray:
    """M_0 reproducing every input's outcome-0 frequency exactly."""
    design = np.real(np.einsum("kij,nji->nk", PAULI_MATRICES, states)) / 2
    if np.linalg.cond(design) >= 1e8:
        raise DegenerateDataError("Input states do not span the qubit operator space")
    coordinates = np.linalg.solve(design, frequencies)
    return np.einsum("k,kij->ij", coordinates, PAULI_MATRICES) / 2


def _inverse_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    return (vectors / np.sqrt(values)) @ np.conj(vectors.T)


def _dilute_step(states, counts, m0, dilution):
    """M_b <- L^-1 (I + eR_b) M_b (I + eR_b) L^-1 with L the square root of the sum over b."""
    total = counts.sum()
    probabilities = np.maximum(_binary_probabilities(states, m0), _TINY)
    weights = counts / total / probabilities
    pair = (m0, IDENTITY - m0)
    grown = []
    for b in (0, 1):
        r = np.einsum("n,nij->ij", weights[:, b], states)
        a = IDENTITY + dilution * r
        grown.append(a @ pair[b] @ a)
    norm = _inverse_sqrt(grown[0] + grown[1])
    m0 = norm @ grown[0] @ norm
    return 0.5 * (m0 + np.conj(m0.T))


def fit_binary_detector(states: np.ndarray, counts: np.ndarray, start: np.ndarray,
                        settings: RecoverySettings) -> Tuple[np.ndarray, bool, int, List[float]]:
    """
    Maximum-likelihood two-outcome detector for one basis.

    `counts[i, b]` are outcome tallies for input state i. The model has as
    many parameters as inputs, so when the inverted frequencies already form
    a valid detector they are the maximum; otherwise diluted fixed-point
    ascent runs from `start`, halving the dilution whenever a step would
    lower the likelihood. Boundary optima (zero-count outcomes) are only
    approached asymptotically, so the ascent also stops once a full-size
    step moves M_0 by less than `step_tolerance`.
    """
    totals = counts.sum(axis=1)
    if np.any(totals <= 0):
        raise DegenerateDataError("Every input state needs at least one shot in every basis")

    frequencies = counts[:, 0] / totals
    inverted = _linear_inversion(states, frequencies)
    eigenvalues = np.linalg.eigvalsh(inverted)
    if eigenvalues[0] >= -settings.psd_tolerance and eigenvalues[1] <= 1.0 + settings.psd_tolerance:
        ll = _log_likelihood(counts, np.clip(_binary_probabilities(states, inverted), 0.0, 1.0))
        return inverted, True, 0, [ll]

    m0 = start
    ll = _log_likelihood(counts, _binary_probabilities(states, m0))
    history = [ll]
    dilution = settings.initial_dilution
    scale = max(counts.sum(), 1.0)
    for iteration in range(1, settings.max_iterations + 1):
        backtracked = False
        while True:
            candidate = _dilute_step(states, counts, m0, dilution)
            ll_new = _log_likelihood(counts, _binary_probabilities(states, candidate))
            if ll_new >= ll:
                break
            backtracked = True
            dilution /= 2
            if dilution < 1e-12:
                return m0, True, iteration, history
        gain = ll_new - ll
        step = float(np.linalg.norm(candidate - m0))
        m0, ll = candidate, ll_new
        history.append(ll)
        if gain <= settings.tolerance * scale:
            return m0, True, iteration, history
        if not backtracked and step <= settings.step_tolerance:
            return m0, True, iteration, history
        dilution = min(2 * dilution, settings.initial_dilution * 64)
    return m0, False, settings.max_iterations, history


def fit_local_detector(counts: np.ndarray, basis_probabilities=None,
                       settings: Optional[RecoverySettings] = None,
                       input_states: Optional[np.ndarray] = None) -> QdtFit:
    """Fit the three binary detectors of one qubit from its (4, 3, 2) counts."""
    settings = settings or RecoverySettings()
    states = ideal_input_states() if input_states is None else input_states
    if basis_probabilities is None:
        probs = BasisDistribution.symmetric().as_array()
    elif isinstance(basis_probabilities, BasisDistribution):
        probs = basis_probabilities.as_array()
    else:
        probs = np.asarray(basis_probabilities, dtype=float)
    counts = np.asarray(counts, dtype=float)

    measurements = np.empty((3, 2, 2, 2), dtype=complex)
    converged, iterations, total_ll, history = True, 0, 0.0, []
    for b in range(3):
        d = settings.start_depolarization
        start = (1 - d) * eigenprojector(b, 0) + d * IDENTITY / 2
        m0, ok, its, trace = fit_binary_detector(states, counts[:, b, :], start, settings)

        bloch = np.real(np.einsum("kij,ji->k", PAULI_MATRICES[1:], m0))
        if np.linalg.norm(bloch) <= 1e-6:
            raise DegenerateDataError(
                f"Basis {BASIS_LABELS[b]} detector carries no information (outcome independent of input)"
            )
        measurements[b, 0] = m0
        measurements[b, 1] = IDENTITY - m0
        converged &= ok
        iterations = max(iterations, its)
        total_ll += trace[-1]
        history.append(trace)

    if not converged:
        logger.warning(f"Detector fit stopped after {iterations} iterations without converging")
    povm = LocalPovm((probs[:, None, None, None] * measurements).reshape(6, 2, 2), basis_probabilities=probs)
    # Aggregate trajectory: per-basis histories are independent, expose the summed curve
    length = max(len(h) for h in history)
    padded = [h + [h[-1]] * (length - len(h)) for h in history]
    return QdtFit(measurements, povm, bool(converged), iterations, total_ll, list(np.sum(padded, axis=0)))


def recover_local_povm(counts: np.ndarray, settings: Optional[RecoverySettings] = None,
                       basis_probabilities=None, input_states: Optional[np.ndarray] = None) -> LocalPovm:
    return fit_local_detector(counts, basis_probabilities, settings, input_states).povm


def fit_all(data: TomographyData, settings: Optional[RecoverySettings] = None,
            basis_probabilities: Optional[Sequence] = None, workers: int = 1) -> List[QdtFit]:
    """Independent per-qubit fits, optionally on a thread pool; result order follows qubit order."""
    settings = settings or RecoverySettings()
    n = data.num_qubits
    if basis_probabilities is not None and len(basis_probabilities) != n:
        raise DimensionMismatchError(f"{len(basis_probabilities)} basis distributions for {n} qubits")
    probs = list(basis_probabilities) if basis_probabilities is not None else [None] * n

    def work(q):
        return fit_local_detector(data.counts[q], probs[q], settings, data.input_states)

    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            fits = list(executor.map(work, range(n)))
    else:
        fits = [work(q) for q in range(n)]
    logger.info(
        f"Detector tomography on {n} qubits: "
        f"{sum(f.converged for f in fits)}/{n} converged, max {max(f.iterations for f in fits)} iterations"
    )
    return fits


def recover_all(data: TomographyData, settings: Optional[RecoverySettings] = None,
                basis_probabilities: Optional[Sequence] = None, workers: int = 1) -> List[LocalPovm]:
    return [fit.povm for fit in fit_all(data, settings, basis_probabilities, workers)]


@dataclass(frozen=True)
class OutcomeTally:
    counts: np.ndarray  # shots reporting 0 and 1
    empty: bool

    @property
    def shots(self) -> int:
        return int(self.counts.sum())

    def frequency(self, outcome: int) -> Optional[float]:
        return None if self.empty else float(self.counts[outcome] / self.counts.sum())


def marginalize_counts(blocks: Sequence, qubit: int, basis: Union[str, int]) -> OutcomeTally:
    """Outcome tally on one qubit over the shots whose setting measured it in `basis`."""
    if not blocks:
        raise TomographyError("marginalize_counts needs at least one block")
    b = basis if isinstance(basis, int) else BASIS_LABELS.index(basis)
    counts = np.zeros(2, dtype=np.int64)
    for block in blocks:
        if not 0 <= qubit < block.num_qubits:
            raise DimensionMismatchError(f"Qubit {qubit} outside a {block.num_qubits}-qubit block")
        if block.setting[qubit] == b:
            ones = int(np.count_nonzero(block.outcomes[:, qubit]))
            counts += (block.outcomes.shape[0] - ones, ones)
    empty = counts.sum() == 0
    if empty:
        logger.warning(f"No shots measured qubit {qubit} in basis {BASIS_LABELS[b]}")
    return OutcomeTally(counts, bool(empty))


def tally_records(records: Iterable, qubit: int, input_label: str, basis: Union[str, int],
                  group: Optional[str] = None) -> OutcomeTally:
    """Outcome tally of one qubit across QDT circuit records."""
    basis = basis if isinstance(basis, str) else BASIS_LABELS[basis]
    counts = np.zeros(2, dtype=np.int64)
    for record in records:
        if not 0 <= qubit < record.num_qubits:
            raise DimensionMismatchError(f"Qubit {qubit} outside a {record.num_qubits}-qubit record")
        if record.input_label == input_label and record.basis == basis and (group is None or record.group == group):
            counts += np.asarray(record.counts[qubit], dtype=np.int64)
    return OutcomeTally(counts, bool(counts.sum() == 0))
