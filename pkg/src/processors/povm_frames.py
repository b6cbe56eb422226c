"""
Six-outcome local Pauli POVMs, their canonical dual frames and the
omega coefficients used by the Monte Carlo estimator.

Effect order everywhere is (X,0), (X,1), (Y,0), (Y,1), (Z,0), (Z,1); the
local outcome index of (basis b, bit o) is 2*b + o.
"""
import json
import math
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import linalg

from src.errors import DimensionMismatchError, InvalidPovmError, NotInformationallyCompleteError
from src.logger import setup_logger
from src.processors.pauli_algebra import AXIS_CODES, PAULI_MATRICES, Observable
from src.utils import BASIS_LABELS

logger = setup_logger("PovmFrames")

DEFAULT_FLOOR = 0.01
PSD_TOLERANCE = 1e-9
MAX_FRAME_CONDITION = 1e8
EFFECT_LABELS = [(basis, outcome) for basis in BASIS_LABELS for outcome in (0, 1)]

# Working-set bound for the vectorised evaluator (terms x rows per chunk)
_CHUNK_ELEMENTS = 2_000_000
_TABLE_BYTES = 64 * 1024 * 1024


class BasisDistribution(BaseModel):
    """Probabilities of measuring X, Y or Z on one qubit."""

    model_config = ConfigDict(frozen=True)

    p_x: float
    p_y: float
    p_z: float
    floor: float = DEFAULT_FLOOR

    @field_validator("floor")
    @classmethod
    def _floor_range(cls, value):
        if not 0 <= value <= 1 / 3:
            raise ValueError(f"floor must lie in [0, 1/3], got {value}")
        return value

    @model_validator(mode="after")
    def _check_probabilities(self):
        probs = (self.p_x, self.p_y, self.p_z)
        if not all(math.isfinite(p) for p in probs):
            raise ValueError(f"Non-finite basis probabilities {probs}")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"Basis probabilities {probs} do not sum to 1")
        if min(probs) < self.floor - 1e-12:
            raise ValueError(f"Basis probabilities {probs} fall below the floor {self.floor}")
        return self

    @classmethod
    def symmetric(cls, floor: float = DEFAULT_FLOOR) -> "BasisDistribution":
        return cls(p_x=1 / 3, p_y=1 / 3, p_z=1 / 3, floor=floor)

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, self.p_z])


def eigenprojector(basis: int, outcome: int) -> np.ndarray:
    """Projector onto the (-1)**outcome eigenspace of the basis Pauli."""
    sign = 1 - 2 * outcome
    return 0.5 * (PAULI_MATRICES[0] + sign * PAULI_MATRICES[basis + 1])


class LocalPovm:
    """Six PSD 2x2 effects summing to identity, plus the basis probabilities they were built with."""

    def __init__(self, effects, basis_probabilities: Optional[Sequence[float]] = None, validate: bool = True):
        arr = np.array(effects, dtype=complex).reshape(6, 2, 2)
        if validate:
            self._validate(arr)
        self.effects = arr
        self.effects.setflags(write=False)

        if basis_probabilities is None:
            traces = np.real(np.trace(arr, axis1=1, axis2=2))
            basis_probabilities = (traces[0::2] + traces[1::2]) / 2
        self.basis_probabilities = np.array(basis_probabilities, dtype=float)
        self.basis_probabilities.setflags(write=False)

    @staticmethod
    def _validate(effects: np.ndarray):
        if not np.allclose(effects, np.conj(np.transpose(effects, (0, 2, 1))), atol=PSD_TOLERANCE, rtol=0):
            raise InvalidPovmError("Effects are not Hermitian")
        eigenvalues = np.linalg.eigvalsh(effects)
        if eigenvalues.min() < -PSD_TOLERANCE:
            idx = int(np.argmin(eigenvalues.min(axis=1)))
            raise InvalidPovmError(
                f"Effect {EFFECT_LABELS[idx]} has negative eigenvalue {eigenvalues.min():.3e}"
            )
        total = effects.sum(axis=0)
        if np.max(np.abs(total - np.eye(2))) > PSD_TOLERANCE:
            raise InvalidPovmError(f"Effects sum to {total.tolist()} instead of identity")

    def effect(self, basis: Union[str, int], outcome: int) -> np.ndarray:
        return self.effects[2 * _basis_index(basis) + int(outcome)]

    def probabilities(self, density_matrix: np.ndarray) -> np.ndarray:
        """Born-rule probabilities of the six outcomes."""
        return np.real(np.einsum("kij,ji->k", self.effects, density_matrix))

    def __repr__(self):
        return f"LocalPovm(basis_probabilities={self.basis_probabilities.tolist()})"


class DualFrame:
    """
    Dual operators D_i paired with a LocalPovm's effects.

    `weights[a, i]` caches Tr[D_i sigma_a] for a in I, X, Y, Z.
    """

    def __init__(self, duals, frame_operator_condition: float):
        self.duals = np.array(duals, dtype=complex).reshape(6, 2, 2)
        self.duals.setflags(write=False)
        self.frame_operator_condition = float(frame_operator_condition)
        self.weights = np.real(np.einsum("aij,kji->ak", PAULI_MATRICES, self.duals))
        self.weights.setflags(write=False)

    def reconstruct(self, povm: LocalPovm, operator: np.ndarray) -> np.ndarray:
        """Sum_i Tr[D_i A] Pi_i; equals A for a valid dual."""
        coefficients = np.einsum("kij,ji->k", self.duals, operator)
        return np.einsum("k,kij->ij", coefficients, povm.effects)


def _basis_index(basis: Union[str, int]) -> int:
    if isinstance(basis, str):
        if basis not in BASIS_LABELS:
            raise ValueError(f"Illegal basis '{basis}'")
        return BASIS_LABELS.index(basis)
    basis = int(basis)
    if basis not in (0, 1, 2):
        raise ValueError(f"Illegal basis index {basis}")
    return basis


def _axis_index(axis: Union[str, int]) -> int:
    if isinstance(axis, str):
        if axis not in AXIS_CODES:
            raise ValueError(f"Illegal axis '{axis}'")
        return AXIS_CODES[axis]
    return int(axis)


def ideal_local_povm(dist: BasisDistribution) -> LocalPovm:
    probs = dist.as_array()
    effects = [probs[b] * eigenprojector(b, o) for b in range(3) for o in (0, 1)]
    return LocalPovm(effects, basis_probabilities=probs)


def _pauli_vectors(operators: np.ndarray) -> np.ndarray:
    """Coordinates in the orthonormal basis sigma_k / sqrt(2)."""
    return np.real(np.einsum("kij,nji->nk", PAULI_MATRICES, operators)) / math.sqrt(2)


def canonical_dual(povm: LocalPovm) -> DualFrame:
    """
    Canonical dual of the trace-weighted frame operator
    F = sum_k |Pi_k>><<Pi_k| / Tr[Pi_k],  D_k = F^-1(Pi_k) / Tr[Pi_k].

    F maps the identity to itself, so Tr[D_k] = 1 for every outcome and an
    identity term contributes its bare coefficient to each omega.
    """
    vectors = _pauli_vectors(povm.effects)
    traces = np.real(np.trace(povm.effects, axis1=1, axis2=2))
    present = traces > 1e-15
    weights = np.zeros(6)
    weights[present] = 1.0 / traces[present]

    frame = np.einsum("k,ki,kj->ij", weights, vectors, vectors)
    condition = float(np.linalg.cond(frame))
    if not math.isfinite(condition) or condition >= MAX_FRAME_CONDITION:
        raise NotInformationallyCompleteError(
            f"Frame operator is singular or ill-conditioned (condition number {condition:.3e})",
            condition=condition,
        )

    coordinates = linalg.solve(frame, (vectors * weights[:, None]).T, assume_a="sym").T
    duals = np.einsum("kj,jab->kab", coordinates, PAULI_MATRICES) / math.sqrt(2)
    return DualFrame(duals, condition)


def pauli_weight(dual: DualFrame, axis: Union[str, int], basis: Union[str, int], outcome: int) -> float:
    """Tr[D_{basis,outcome} sigma_axis], sigma_I being the identity."""
    return float(dual.weights[_axis_index(axis), 2 * _basis_index(basis) + int(outcome)])


class ProductPovm:
    """One (LocalPovm, DualFrame) pair per qubit."""

    def __init__(self, povms: Sequence[LocalPovm], duals: Optional[Sequence[DualFrame]] = None):
        if not povms:
            raise ValueError("ProductPovm needs at least one qubit")
        if duals is None:
            duals = [canonical_dual(p) for p in povms]
        if len(duals) != len(povms):
            raise DimensionMismatchError(f"{len(povms)} POVMs but {len(duals)} dual frames")
        self.povms = list(povms)
        self.duals = list(duals)

    @classmethod
    def ideal(cls, dists: Sequence[BasisDistribution]) -> "ProductPovm":
        return cls([ideal_local_povm(d) for d in dists])

    @property
    def num_qubits(self) -> int:
        return len(self.povms)

    def __len__(self):
        return len(self.povms)

    def __iter__(self):
        return iter(zip(self.povms, self.duals))

    def weight_table(self) -> np.ndarray:
        """(num_qubits, 4 axes, 6 local outcomes) table of pauli weights."""
        return np.stack([d.weights for d in self.duals])

    def basis_probabilities(self) -> np.ndarray:
        return np.stack([p.basis_probabilities for p in self.povms])

    def max_condition(self) -> float:
        return max(d.frame_operator_condition for d in self.duals)


def _basis_indices(setting) -> List[int]:
    if isinstance(setting, str):
        return [_basis_index(c) for c in setting]
    return [_basis_index(b) for b in setting]


def omega_value(obs: Observable, povm: ProductPovm, setting, outcome) -> float:
    """
    omega for one joint (setting, outcome): sum_P c_P prod_q Tr[D^q sigma_{P,q}].

    Reference implementation; a term is abandoned at its first zero factor.
    """
    bases = _basis_indices(setting)
    bits = [int(b) for b in outcome]
    n = obs.num_qubits
    if len(bases) != n or len(bits) != n or povm.num_qubits != n:
        raise DimensionMismatchError(
            f"Observable on {n} qubits, POVM on {povm.num_qubits}, setting {len(bases)}, outcome {len(bits)}"
        )
    table = povm.weight_table()
    local = [2 * b + o for b, o in zip(bases, bits)]

    total = 0.0
    for coefficient, codes in zip(obs.coefficients, obs.codes):
        product = float(coefficient)
        for q in range(n):
            product *= table[q, codes[q], local[q]]
            if product == 0.0:
                break
        total += product
    return total


class OmegaEvaluator:
    """
    Vectorised omega over many (setting, outcome) rows.

    Qubits are grouped into blocks of up to four; for each block a
    (terms x 6**size) table of partial products is precomputed, so a row
    costs one gather per block per term.
    """

    def __init__(self, obs: Observable, povm: ProductPovm):
        if obs.num_qubits != povm.num_qubits:
            raise DimensionMismatchError(
                f"Observable has {obs.num_qubits} qubits, POVM has {povm.num_qubits}"
            )
        self.num_qubits = obs.num_qubits
        self.num_terms = obs.num_terms
        table = povm.weight_table()
        codes = obs.codes.astype(np.intp)

        size = 4
        while size > 1 and self.num_terms * 6 ** size * 8 > _TABLE_BYTES:
            size -= 1
        self.blocks = [list(range(s, min(s + size, self.num_qubits))) for s in range(0, self.num_qubits, size)]

        self.tables = []
        for qubits in self.blocks:
            partial = np.ones((self.num_terms, 1))
            for q in qubits:
                factors = table[q][codes[:, q]]
                partial = (partial[:, :, None] * factors[:, None, :]).reshape(self.num_terms, -1)
            self.tables.append(partial)
        if self.tables and self.num_terms:
            self.tables[0] = self.tables[0] * obs.coefficients[:, None]

    def _keys(self, local_rows: np.ndarray) -> List[np.ndarray]:
        keys = []
        for qubits in self.blocks:
            key = np.zeros(local_rows.shape[0], dtype=np.intp)
            for q in qubits:
                key = key * 6 + local_rows[:, q]
            keys.append(key)
        return keys

    def evaluate(self, local_rows: np.ndarray) -> np.ndarray:
        """`local_rows` is (rows, qubits) of local outcome indices 2*basis + bit."""
        local_rows = np.asarray(local_rows, dtype=np.intp)
        if local_rows.ndim != 2 or local_rows.shape[1] != self.num_qubits:
            raise DimensionMismatchError(f"Expected rows of {self.num_qubits} local outcomes")
        rows = local_rows.shape[0]
        out = np.zeros(rows)
        if not self.num_terms or not rows:
            return out

        keys = self._keys(local_rows)
        chunk = max(1, _CHUNK_ELEMENTS // self.num_terms)
        for start in range(0, rows, chunk):
            stop = min(start + chunk, rows)
            product = self.tables[0][:, keys[0][start:stop]]
            for table, key in zip(self.tables[1:], keys[1:]):
                product = product * table[:, key[start:stop]]
            out[start:stop] = product.sum(axis=0)
        return out

    def evaluate_settings(self, settings: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
        return self.evaluate(2 * np.asarray(settings, dtype=np.intp) + np.asarray(outcomes, dtype=np.intp))


def _apply_floor(probs: np.ndarray, floor: float) -> np.ndarray:
    """Raise entries below `floor` to it and share the remaining mass proportionally among the rest."""
    original = probs.copy()
    out = probs.copy()
    fixed = np.zeros(3, dtype=bool)
    while True:
        low = (~fixed) & (out < floor)
        if not low.any():
            break
        fixed |= low
        free = ~fixed
        out[fixed] = floor
        if not free.any():
            break
        remaining = 1.0 - floor * fixed.sum()
        share = original[free]
        out[free] = remaining * share / share.sum() if share.sum() > 0 else remaining / free.sum()
    return out


def lbcs_bias(obs: Observable, floor: float = DEFAULT_FLOOR) -> List[BasisDistribution]:
    """
    Locally biased basis probabilities: p_B(q) proportional to the absolute
    coefficient mass of the terms acting with axis B on qubit q.

    A simple heuristic, not an optimiser. Untouched qubits stay symmetric and
    every probability is held at or above `floor` to keep the POVM IC.
    """
    if obs.num_terms == 0:
        raise ValueError("lbcs_bias needs a non-empty observable")
    if not 0 < floor <= 1 / 3:
        raise ValueError(f"floor must lie in (0, 1/3], got {floor}")

    magnitudes = np.abs(obs.coefficients)
    mass = np.stack([(magnitudes[:, None] * (obs.codes == b + 1)).sum(axis=0) for b in range(3)], axis=1)

    dists = []
    for q in range(obs.num_qubits):
        total = mass[q].sum()
        if total <= 0:
            dists.append(BasisDistribution.symmetric(floor=floor))
            continue
        p = _apply_floor(mass[q] / total, floor)
        dists.append(BasisDistribution(p_x=float(p[0]), p_y=float(p[1]), p_z=float(p[2]), floor=floor))
    return dists


def povm_document(povms: Sequence[LocalPovm]) -> dict:
    qubits = []
    for povm in povms:
        effects = []
        for (basis, outcome), effect in zip(EFFECT_LABELS, povm.effects):
            entries = [[float(z.real), float(z.imag)] for z in effect.reshape(-1)]
            effects.append({"basis": basis, "outcome": outcome, "entries": entries})
        qubits.append({
            "basis_probabilities": [float(p) for p in povm.basis_probabilities],
            "effects": effects,
        })
    return {"format": "product-povm", "version": 1, "qubits": qubits}


def povms_from_document(document: dict) -> List[LocalPovm]:
    if document.get("format") != "product-povm":
        raise ValueError(f"Not a POVM document: format={document.get('format')!r}")
    povms = []
    for entry in document["qubits"]:
        by_label = {(e["basis"], int(e["outcome"])): e["entries"] for e in entry["effects"]}
        effects = []
        for label in EFFECT_LABELS:
            pairs = by_label[label]
            effects.append(np.array([complex(re, im) for re, im in pairs]).reshape(2, 2))
        povms.append(LocalPovm(effects, basis_probabilities=entry["basis_probabilities"]))
    return povms


def save_povms(povms: Sequence[LocalPovm], path: str):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(povm_document(povms), f, indent=1)


def load_povms(path: str) -> ProductPovm:
    with open(path, 'r', encoding='utf-8') as f:
        return ProductPovm(povms_from_document(json.load(f)))
