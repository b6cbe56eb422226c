"""
Pauli-string observables, the Hamiltonian file format and exact expectation
values on product states.
"""
import math
import re
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.errors import DimensionMismatchError, ObservableParseError
from src.logger import setup_logger

logger = setup_logger("PauliAlgebra")

AXES = "IXYZ"
AXIS_CODES = {axis: code for code, axis in enumerate(AXES)}

PAULI_MATRICES = np.array([
    [[1, 0], [0, 1]],
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)

DENSE_ORACLE_MAX_QUBITS = 10

_SPARSE_TOKEN = re.compile(r"^([IXYZ])(\d+)$")


class PauliString:
    """Sparse map qubit -> axis; qubits not listed act as identity."""

    __slots__ = ("_axes",)

    def __init__(self, axes: Optional[Mapping[int, str]] = None):
        cleaned = {}
        for qubit, axis in (axes or {}).items():
            qubit = int(qubit)
            if qubit < 0:
                raise ValueError(f"Negative qubit index {qubit}")
            if axis == "I":
                continue
            if axis not in ("X", "Y", "Z"):
                raise ValueError(f"Illegal axis '{axis}' on qubit {qubit}")
            cleaned[qubit] = axis
        self._axes = tuple(sorted(cleaned.items()))

    @classmethod
    def from_dense(cls, text: str) -> "PauliString":
        return cls({q: a for q, a in enumerate(text)})

    @classmethod
    def from_codes(cls, codes: Sequence[int]) -> "PauliString":
        return cls({q: AXES[int(c)] for q, c in enumerate(codes)})

    @property
    def axes(self) -> Dict[int, str]:
        return dict(self._axes)

    def axis(self, qubit: int) -> str:
        for q, a in self._axes:
            if q == qubit:
                return a
        return "I"

    @property
    def weight(self) -> int:
        return len(self._axes)

    @property
    def is_identity(self) -> bool:
        return not self._axes

    @property
    def max_qubit(self) -> int:
        return self._axes[-1][0] if self._axes else -1

    def to_dense(self, num_qubits: int) -> str:
        chars = ["I"] * num_qubits
        for q, a in self._axes:
            chars[q] = a
        return "".join(chars)

    def codes(self, num_qubits: int) -> np.ndarray:
        out = np.zeros(num_qubits, dtype=np.int8)
        for q, a in self._axes:
            out[q] = AXIS_CODES[a]
        return out

    def __eq__(self, other):
        return isinstance(other, PauliString) and self._axes == other._axes

    def __hash__(self):
        return hash(self._axes)

    def __repr__(self):
        if not self._axes:
            return "PauliString(I)"
        return "PauliString(" + " ".join(f"{a}{q}" for q, a in self._axes) + ")"


class Observable:
    """
    Weighted sum of Pauli strings on `num_qubits` qubits.

    Duplicate strings are merged by coefficient addition (math.fsum, so the
    result does not depend on input order) and the terms are kept in canonical
    dense-string order. Immutable after construction.
    """

    def __init__(self, num_qubits: int, terms: Iterable[Tuple[float, PauliString]]):
        if int(num_qubits) < 1:
            raise ValueError(f"Observable needs at least one qubit, got {num_qubits}")
        self.num_qubits = int(num_qubits)

        grouped: Dict[PauliString, List[float]] = {}
        for coefficient, string in terms:
            coefficient = float(coefficient)
            if not math.isfinite(coefficient):
                raise ValueError(f"Non-finite coefficient {coefficient} for {string!r}")
            if string.max_qubit >= self.num_qubits:
                raise DimensionMismatchError(
                    f"{string!r} acts on qubit {string.max_qubit} but the observable has {self.num_qubits} qubits"
                )
            grouped.setdefault(string, []).append(coefficient)

        merged = [(math.fsum(cs), s) for s, cs in grouped.items()]
        merged.sort(key=lambda term: term[1].to_dense(self.num_qubits))
        self.terms: Tuple[Tuple[float, PauliString], ...] = tuple(merged)

        self.coefficients = np.array([c for c, _ in self.terms], dtype=float)
        if self.terms:
            self.codes = np.stack([s.codes(self.num_qubits) for _, s in self.terms])
        else:
            self.codes = np.zeros((0, self.num_qubits), dtype=np.int8)
        self.coefficients.setflags(write=False)
        self.codes.setflags(write=False)

    @property
    def num_terms(self) -> int:
        return len(self.terms)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __eq__(self, other):
        return (
            isinstance(other, Observable)
            and self.num_qubits == other.num_qubits
            and self.terms == other.terms
        )

    def __add__(self, other: "Observable") -> "Observable":
        if not isinstance(other, Observable):
            return NotImplemented
        if other.num_qubits != self.num_qubits:
            raise DimensionMismatchError(
                f"Cannot add observables on {self.num_qubits} and {other.num_qubits} qubits"
            )
        return Observable(self.num_qubits, list(self.terms) + list(other.terms))

    def __mul__(self, scalar: float) -> "Observable":
        return Observable(self.num_qubits, [(scalar * c, s) for c, s in self.terms])

    __rmul__ = __mul__

    def __repr__(self):
        return f"Observable(num_qubits={self.num_qubits}, num_terms={self.num_terms})"


class ProductState:
    """Separable pure state: one normalized 2-vector per qubit."""

    def __init__(self, vectors):
        arr = np.asarray(vectors, dtype=complex).reshape(-1, 2)
        if arr.shape[0] == 0:
            raise ValueError("ProductState needs at least one qubit")
        norms = np.linalg.norm(arr, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-12)
        if bad.size:
            raise ValueError(f"Qubit {int(bad[0])} vector is not normalized (norm {norms[bad[0]]!r})")
        self.vectors = arr
        self.vectors.setflags(write=False)

    @classmethod
    def from_bitstring(cls, bits: str) -> "ProductState":
        if not bits or any(c not in "01" for c in bits):
            raise ValueError(f"Illegal computational-basis bitstring '{bits}'")
        return cls([[1, 0] if c == "0" else [0, 1] for c in bits])

    @classmethod
    def from_bloch_angles(cls, angles: Sequence[Sequence[float]]) -> "ProductState":
        vectors = [[math.cos(theta / 2), complex(math.cos(phi), math.sin(phi)) * math.sin(theta / 2)]
                   for theta, phi in angles]
        return cls(vectors)

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "ProductState":
        return cls([LABEL_VECTORS[label] for label in labels])

    @property
    def num_qubits(self) -> int:
        return self.vectors.shape[0]

    def bloch_vectors(self) -> np.ndarray:
        a, b = self.vectors[:, 0], self.vectors[:, 1]
        cross = np.conj(a) * b
        return np.stack([2 * cross.real, 2 * cross.imag, np.abs(a) ** 2 - np.abs(b) ** 2], axis=1)

    def pauli_expectations(self) -> np.ndarray:
        """(num_qubits, 4) table of <psi_q|sigma|psi_q> for sigma in I, X, Y, Z."""
        return np.hstack([np.ones((self.num_qubits, 1)), self.bloch_vectors()])

    def density_matrices(self) -> np.ndarray:
        return np.einsum("qi,qj->qij", self.vectors, np.conj(self.vectors))

    def statevector(self) -> np.ndarray:
        """Dense vector, qubit 0 most significant. Verification use only."""
        if self.num_qubits > DENSE_ORACLE_MAX_QUBITS:
            raise ValueError(f"Dense statevector limited to {DENSE_ORACLE_MAX_QUBITS} qubits")
        psi = np.ones(1, dtype=complex)
        for v in self.vectors:
            psi = np.kron(psi, v)
        return psi


_S = 1 / math.sqrt(2)
LABEL_VECTORS = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([_S, _S], dtype=complex),
    "-": np.array([_S, -_S], dtype=complex),
    "+y": np.array([_S, 1j * _S], dtype=complex),
    "-y": np.array([_S, -1j * _S], dtype=complex),
}


def _parse_coefficient(token: str, line_no: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ObservableParseError(line_no, f"malformed coefficient '{token}'")
    if not math.isfinite(value):
        raise ObservableParseError(line_no, f"non-finite coefficient '{token}'")
    return value


def _parse_axes(tokens: List[str], num_qubits: int, line_no: int) -> PauliString:
    if not tokens:
        raise ObservableParseError(line_no, "missing axis string")

    # Dense form: one token of axis letters covering every qubit
    if len(tokens) == 1 and tokens[0].isalpha():
        text = tokens[0]
        for char in text:
            if char not in AXES:
                raise ObservableParseError(line_no, f"illegal character '{char}'")
        if len(text) != num_qubits:
            raise ObservableParseError(line_no, f"axis string length {len(text)} != {num_qubits}")
        return PauliString.from_dense(text)

    # Sparse form: X0 Z3 ...
    axes = {}
    for token in tokens:
        match = _SPARSE_TOKEN.match(token)
        if not match:
            bad = next((c for c in token if not c.isdigit() and c not in AXES), None)
            if bad is not None:
                raise ObservableParseError(line_no, f"illegal character '{bad}'")
            raise ObservableParseError(line_no, f"malformed sparse token '{token}'")
        axis, qubit = match.group(1), int(match.group(2))
        if qubit >= num_qubits:
            raise ObservableParseError(line_no, f"qubit index {qubit} out of range for {num_qubits} qubits")
        if qubit in axes:
            raise ObservableParseError(line_no, f"qubit {qubit} listed twice")
        axes[qubit] = axis
    return PauliString(axes)


def parse_observable(text: str) -> Observable:
    """
    Parse the Hamiltonian text format.

    The first non-comment line is `qubits <N>`; every other line is
    `<coefficient> <dense axis string>` or `<coefficient> <sparse tokens>`.
    `#` starts a comment; LF and CRLF are both accepted.
    """
    num_qubits = None
    pairs: List[Tuple[float, PauliString]] = []
    last_line = 0

    for line_no, raw in enumerate(text.lstrip("\ufeff").splitlines(), start=1):
        last_line = line_no
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()

        if num_qubits is None:
            if len(tokens) != 2 or tokens[0].lower() != "qubits":
                raise ObservableParseError(line_no, "expected 'qubits <N>' declaration")
            try:
                num_qubits = int(tokens[1])
            except ValueError:
                raise ObservableParseError(line_no, f"malformed qubit count '{tokens[1]}'")
            if num_qubits < 1:
                raise ObservableParseError(line_no, f"qubit count must be positive, got {num_qubits}")
            continue

        coefficient = _parse_coefficient(tokens[0], line_no)
        pairs.append((coefficient, _parse_axes(tokens[1:], num_qubits, line_no)))

    if num_qubits is None:
        raise ObservableParseError(max(last_line, 1), "missing 'qubits <N>' declaration")
    return Observable(num_qubits, pairs)


def load_observable(path: str) -> Observable:
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    obs = parse_observable(text)
    logger.info(f"Loaded {path}: {obs.num_terms} terms on {obs.num_qubits} qubits.")
    return obs


def serialize_observable(obs: Observable) -> str:
    lines = [f"qubits {obs.num_qubits}"]
    for coefficient, string in obs.terms:
        lines.append(f"{coefficient!r} {string.to_dense(obs.num_qubits)}")
    return "\n".join(lines) + "\n"


def save_observable(obs: Observable, path: str):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(serialize_observable(obs))


def exact_expectation(obs: Observable, state: ProductState) -> float:
    """Sum_P c_P * prod_q <psi_q|sigma_{P,q}|psi_q>."""
    if obs.num_qubits != state.num_qubits:
        raise DimensionMismatchError(
            f"Observable has {obs.num_qubits} qubits, state has {state.num_qubits}"
        )
    if not obs.num_terms:
        return 0.0
    table = state.pauli_expectations()
    factors = table[np.arange(obs.num_qubits), obs.codes]
    return float(np.dot(obs.coefficients, np.prod(factors, axis=1)))


def dense_expectation(obs: Observable, state: ProductState) -> float:
    """Statevector contraction oracle (<= 10 qubits), independent of the product formula."""
    if obs.num_qubits != state.num_qubits:
        raise DimensionMismatchError(
            f"Observable has {obs.num_qubits} qubits, state has {state.num_qubits}"
        )
    n = obs.num_qubits
    psi = state.statevector().reshape((2,) * n)
    total = 0.0
    for coefficient, string in obs.terms:
        phi = psi
        for qubit, axis in string.axes.items():
            phi = np.moveaxis(np.tensordot(PAULI_MATRICES[AXIS_CODES[axis]], phi, axes=([1], [qubit])), 0, qubit)
        total += coefficient * float(np.vdot(psi, phi).real)
    return total


def _codes_from_indices(indices: np.ndarray, num_qubits: int) -> np.ndarray:
    powers = 4 ** np.arange(num_qubits - 1, -1, -1, dtype=np.int64)
    return ((indices[:, None] // powers[None, :]) % 4).astype(np.int8)


def count_pauli_strings(num_qubits: int, max_weight: Optional[int]) -> int:
    if max_weight is None or max_weight >= num_qubits:
        return 4 ** num_qubits
    return sum(math.comb(num_qubits, k) * 3 ** k for k in range(max_weight + 1))


def random_observable(num_qubits: int, num_terms: int, coefficient_scale: float = 1.0, seed: int = 0,
                      axis_weights: Optional[Sequence[float]] = None,
                      max_weight: Optional[int] = None, weight_decay: Optional[float] = None,
                      reference_bits: Optional[str] = None) -> Observable:
    """
    Synthetic observable with `num_terms` distinct Pauli strings and
    coefficients uniform in [-scale, scale]; deterministic per seed.

    `axis_weights` (I, X, Y, Z) skews how often each axis is drawn per qubit
    and `max_weight` caps the number of non-identity axes, which gives the
    Z-heavy, low-weight shape of Hamiltonians measured on Hartree-Fock states.
    `weight_decay` shrinks the coefficient range by that factor per extra
    non-identity axis. With `reference_bits` every diagonal (I/Z only) term
    gets the sign that lowers its value on that computational basis state,
    as mean-field terms do on the reference determinant.
    """
    if num_qubits < 1:
        raise ValueError(f"num_qubits must be positive, got {num_qubits}")
    if num_terms < 1:
        raise ValueError(f"num_terms must be positive, got {num_terms}")
    available = count_pauli_strings(num_qubits, max_weight)
    if num_terms > available:
        raise ValueError(f"num_terms {num_terms} exceeds the {available} available Pauli strings")
    if weight_decay is not None and not 0 < weight_decay <= 1:
        raise ValueError(f"weight_decay must lie in (0, 1], got {weight_decay}")
    if reference_bits is not None and (len(reference_bits) != num_qubits or set(reference_bits) - {"0", "1"}):
        raise ValueError(f"reference_bits must be a {num_qubits}-character bitstring, got '{reference_bits}'")

    rng = np.random.default_rng(seed)

    if axis_weights is None and max_weight is None and available <= 2 ** 22:
        indices = rng.choice(available, size=num_terms, replace=False)
        codes = _codes_from_indices(np.asarray(indices, dtype=np.int64), num_qubits)
    else:
        weights = np.full(4, 0.25) if axis_weights is None else np.asarray(axis_weights, dtype=float)
        if weights.shape != (4,) or np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError(f"axis_weights must be four non-negative numbers, got {axis_weights}")
        weights = weights / weights.sum()

        seen = set()
        rows = []
        budget = 1000 * num_terms + 10000
        while len(rows) < num_terms and budget > 0:
            batch = rng.choice(4, size=(max(64, num_terms), num_qubits), p=weights).astype(np.int8)
            budget -= batch.shape[0]
            for row in batch:
                if max_weight is not None and np.count_nonzero(row) > max_weight:
                    continue
                key = row.tobytes()
                if key in seen:
                    continue
                seen.add(key)
                rows.append(row)
                if len(rows) == num_terms:
                    break
        if len(rows) < num_terms:
            raise ValueError(
                f"Could not draw {num_terms} distinct strings with axis_weights={axis_weights}, max_weight={max_weight}"
            )
        codes = np.stack(rows)

    coefficients = rng.uniform(-coefficient_scale, coefficient_scale, size=num_terms)
    if weight_decay is not None:
        coefficients = coefficients * weight_decay ** np.maximum(np.count_nonzero(codes, axis=1) - 1, 0)
    if reference_bits is not None:
        ones = np.array([bit == "1" for bit in reference_bits])
        diagonal = np.all((codes == 0) | (codes == 3), axis=1)
        parity = np.count_nonzero((codes == 3) & ones[None, :], axis=1) % 2
        value = np.where(parity == 1, -1.0, 1.0)
        coefficients = np.where(diagonal, -np.abs(coefficients) * value, coefficients)
    return Observable(num_qubits, [(c, PauliString.from_codes(row)) for c, row in zip(coefficients, codes)])
