from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, List, Literal, Optional, Tuple

from src.processors.detector_noise import TelegraphProcess
from src.processors.pauli_algebra import count_pauli_strings


class RandomObservableSpec(BaseModel):
    num_qubits: int = Field(ge=1)
    num_terms: int = Field(ge=1)
    coefficient_scale: float = 1.0
    seed: int = 0
    # Relative frequencies of I, X, Y, Z per qubit; Z-heavy mimics molecular Hamiltonians
    axis_weights: Optional[List[float]] = None
    max_weight: Optional[int] = Field(default=None, ge=1)
    weight_decay: Optional[float] = Field(default=None, gt=0, le=1)
    # Diagonal terms get the sign that lowers their value on this bitstring
    reference_bits: Optional[str] = None

    @field_validator("axis_weights")
    @classmethod
    def _four_weights(cls, value):
        if value is not None and (len(value) != 4 or min(value) < 0 or sum(value) <= 0):
            raise ValueError("axis_weights needs four non-negative weights for I, X, Y, Z")
        return value

    @model_validator(mode="after")
    def _drawable(self):
        available = count_pauli_strings(self.num_qubits, self.max_weight)
        if self.num_terms > available:
            raise ValueError(f"num_terms {self.num_terms} exceeds the {available} Pauli strings on "
                             f"{self.num_qubits} qubit(s) with max_weight {self.max_weight}")
        if self.reference_bits is not None and (len(self.reference_bits) != self.num_qubits
                                                or set(self.reference_bits) - {"0", "1"}):
            raise ValueError(f"reference_bits must be a {self.num_qubits}-character bitstring")
        return self


class ObservableSource(BaseModel):
    path: Optional[str] = None
    random: Optional[RandomObservableSpec] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.path is None) == (self.random is None):
            raise ValueError("observable needs exactly one of 'path' or 'random'")
        return self


class StateSpec(BaseModel):
    bitstring: Optional[str] = None
    # One [theta, phi] pair per qubit
    bloch_angles: Optional[List[Tuple[float, float]]] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.bitstring is None) == (self.bloch_angles is None):
            raise ValueError("state needs exactly one of 'bitstring' or 'bloch_angles'")
        if self.bitstring is not None and (not self.bitstring or set(self.bitstring) - {"0", "1"}):
            raise ValueError(f"Illegal bitstring '{self.bitstring}'")
        return self

    @property
    def num_qubits(self) -> int:
        return len(self.bitstring) if self.bitstring is not None else len(self.bloch_angles)


class SchemeConfig(BaseModel):
    name: Literal["CS", "LBCS"] = "CS"
    floor: float = Field(default=0.01, gt=0, le=1 / 3)


class TelegraphConfig(BaseModel):
    qubit: int = Field(ge=0)
    e_good: float
    e_bad: float
    rate_gb: float = 0.0
    rate_bg: float = 0.0
    initial_regime: Literal["good", "bad", "stationary"] = "good"
    # Explicit bad-regime windows as fractions of the run time; replaces sampling
    bad_windows: Optional[List[Tuple[float, float]]] = None
    e_good_10: Optional[float] = None
    e_bad_10: Optional[float] = None

    @model_validator(mode="after")
    def _rates_and_windows(self):
        if not 0.0 <= self.e_good <= self.e_bad <= 0.5:
            raise ValueError(f"Telegraph qubit {self.qubit}: need 0 <= e_good <= e_bad <= 0.5, "
                             f"got {self.e_good}, {self.e_bad}")
        for name in ("e_good_10", "e_bad_10"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 0.5:
                raise ValueError(f"Telegraph qubit {self.qubit}: {name}={value} outside [0, 0.5]")
        if self.rate_gb < 0 or self.rate_bg < 0:
            raise ValueError(f"Telegraph qubit {self.qubit}: switching rates must be non-negative")
        last_stop = 0.0
        for start, stop in sorted(self.bad_windows or []):
            if not 0.0 <= start < stop <= 1.0:
                raise ValueError(f"Telegraph qubit {self.qubit}: bad window [{start}, {stop}] is not inside [0, 1]")
            if start < last_stop:
                raise ValueError(f"Telegraph qubit {self.qubit}: bad windows overlap at {start}")
            last_stop = stop
        return self

    def process(self) -> TelegraphProcess:
        return TelegraphProcess(
            e_good=self.e_good, e_bad=self.e_bad, rate_gb=self.rate_gb, rate_bg=self.rate_bg,
            initial_regime=self.initial_regime, e_good_10=self.e_good_10, e_bad_10=self.e_bad_10,
        )


class NoiseConfig(BaseModel):
    static_flip: Optional[float] = Field(default=None, ge=0, le=0.5)
    static_flips: Optional[List[float]] = None
    static_flip_range: Optional[Tuple[float, float]] = None
    seed: int = 0
    basis_flips: Dict[str, float] = {}
    telegraph: List[TelegraphConfig] = []

    @model_validator(mode="after")
    def _one_static_source(self):
        given = [x for x in (self.static_flip, self.static_flips, self.static_flip_range) if x is not None]
        if len(given) > 1:
            raise ValueError("Use only one of static_flip, static_flips, static_flip_range")
        if self.static_flips is not None and any(not 0 <= f <= 0.5 for f in self.static_flips):
            raise ValueError("static_flips must lie in [0, 0.5]")
        if self.static_flip_range is not None:
            low, high = self.static_flip_range
            if not 0 <= low <= high <= 0.5:
                raise ValueError("static_flip_range must satisfy 0 <= low <= high <= 0.5")
        if set(self.basis_flips) - set("XYZ"):
            raise ValueError("basis_flips keys must be X, Y or Z")
        return self


class ScheduleConfig(BaseModel):
    mode: Literal["blended", "regular"] = "blended"
    circuits_per_job: int = Field(default=300, ge=1)
    shots_per_circuit: int = Field(default=100, ge=1)
    slot_seconds: float = Field(default=10.0, gt=0)


class QdtConfig(BaseModel):
    enabled: bool = True
    repeats_per_job: int = Field(default=4, ge=1)
    shots_per_instance: int = Field(default=100, ge=1)
    # Shots per tomography circuit when run up front (regular mode)
    regular_shots: int = Field(default=100_000, ge=1)
    # Extra non-blended tomography before a blended run; 0 disables
    baseline_shots: int = Field(default=0, ge=0)
    max_iterations: int = Field(default=2000, ge=1)
    tolerance: float = Field(default=1e-12, gt=0)
    step_tolerance: float = Field(default=1e-9, gt=0)


class ThresholdConfig(BaseModel):
    qdt_max_sigma: Optional[float] = None
    ideal_min_sigma: Optional[float] = None


class ExperimentConfig(BaseModel):
    label: str = "experiment"
    seed: int = 0
    repetitions: int = Field(default=1, ge=1)
    workers: int = Field(default=1, ge=1)
    output_dir: str = "output"
    curve_points: int = Field(default=12, ge=0)

    observable: ObservableSource
    state: StateSpec
    scheme: SchemeConfig = SchemeConfig()
    settings: int = Field(ge=1)
    shots: int = Field(ge=1)

    noise: NoiseConfig = NoiseConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    qdt: QdtConfig = QdtConfig()
    use_qdt_effects: bool = True
    thresholds: ThresholdConfig = ThresholdConfig()

    @model_validator(mode="after")
    def _sizes_agree(self):
        n = self.state.num_qubits
        if self.observable.random is not None and self.observable.random.num_qubits != n:
            raise ValueError(f"Random observable on {self.observable.random.num_qubits} qubits, state on {n}")
        if self.noise.static_flips is not None and len(self.noise.static_flips) != n:
            raise ValueError(f"static_flips lists {len(self.noise.static_flips)} qubits, state has {n}")
        for entry in self.noise.telegraph:
            if entry.qubit >= n:
                raise ValueError(f"Telegraph qubit {entry.qubit} outside a {n}-qubit system")
        return self
