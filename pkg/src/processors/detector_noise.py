"""
Readout noise: static per-qubit assignment matrices, optionally modulated
by a two-regime (good/bad) random telegraph process.

The reported bit passes through the static matrix first, then an optional
basis-dependent extra flip, then the telegraph flip of the current regime.
"""
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from src.errors import DimensionMismatchError, TrajectoryRangeError
from src.logger import setup_logger
from src.processors.povm_frames import LocalPovm
from src.utils import BASIS_LABELS, STREAM_TRAJECTORY, derived_seed

logger = setup_logger("DetectorNoise")

GOOD = 0
BAD = 1
REGIME_NAMES = ("good", "bad")


class AssignmentMatrix(BaseModel):
    """
    Column-stochastic readout matrix A[b, b'] = Pr(report b | ideal b').

    p01: probability to report 1 when the ideal outcome is 0
    p10: probability to report 0 when the ideal outcome is 1
    """

    model_config = ConfigDict(frozen=True)

    p01: float = 0.0
    p10: float = 0.0

    @field_validator("p01", "p10")
    @classmethod
    def _probability(cls, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"Flip probability {value} outside [0, 1]")
        return float(value)

    @classmethod
    def identity(cls) -> "AssignmentMatrix":
        return cls()

    @classmethod
    def symmetric(cls, flip: float) -> "AssignmentMatrix":
        return cls(p01=flip, p10=flip)

    @classmethod
    def from_matrix(cls, matrix) -> "AssignmentMatrix":
        m = np.asarray(matrix, dtype=float)
        if m.shape != (2, 2) or np.max(np.abs(m.sum(axis=0) - 1.0)) > 1e-12:
            raise ValueError(f"Not a column-stochastic 2x2 matrix: {m.tolist()}")
        return cls(p01=float(m[1, 0]), p10=float(m[0, 1]))

    def matrix(self) -> np.ndarray:
        return np.array([[1.0 - self.p01, self.p10], [self.p01, 1.0 - self.p10]])

    def then(self, after: "AssignmentMatrix") -> "AssignmentMatrix":
        """Channel `after` applied to the output of this one."""
        return AssignmentMatrix.from_matrix(after.matrix() @ self.matrix())

    def is_identity(self) -> bool:
        return self.p01 == 0.0 and self.p10 == 0.0


def noisy_effects(ideal: LocalPovm, a: Union[AssignmentMatrix, Sequence[AssignmentMatrix]]) -> LocalPovm:
    """
    Pi'_{B,b} = sum_b' A[b, b'] Pi_{B,b'}.

    `a` is one matrix for all bases or three, ordered X, Y, Z.
    """
    if isinstance(a, AssignmentMatrix):
        matrices = np.stack([a.matrix()] * 3)
    else:
        if len(a) != 3:
            raise DimensionMismatchError(f"Expected 3 per-basis assignment matrices, got {len(a)}")
        matrices = np.stack([m.matrix() for m in a])
    effects = ideal.effects.reshape(3, 2, 2, 2)
    mixed = np.einsum("Bbc,Bcij->Bbij", matrices, effects)
    return LocalPovm(mixed.reshape(6, 2, 2), basis_probabilities=ideal.basis_probabilities)


class TelegraphProcess(BaseModel):
    """
    Two-regime switching of one qubit's readout flip probability.

    Flips are symmetric unless the optional `e_good_10` / `e_bad_10`
    (probability of reading 0 for an ideal 1) are set.
    """

    model_config = ConfigDict(frozen=True)

    e_good: float
    e_bad: float
    rate_gb: float = 0.0
    rate_bg: float = 0.0
    initial_regime: Literal["good", "bad", "stationary"] = "good"
    e_good_10: Optional[float] = None
    e_bad_10: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if not 0.0 <= self.e_good <= self.e_bad <= 0.5:
            raise ValueError(f"Require 0 <= e_good <= e_bad <= 0.5, got {self.e_good}, {self.e_bad}")
        for name in ("e_good_10", "e_bad_10"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 0.5:
                raise ValueError(f"{name}={value} outside [0, 0.5]")
        if self.rate_gb < 0 or self.rate_bg < 0:
            raise ValueError("Switching rates must be non-negative")
        return self

    def flip_matrix(self, regime: int) -> AssignmentMatrix:
        if regime == GOOD:
            return AssignmentMatrix(p01=self.e_good, p10=self.e_good if self.e_good_10 is None else self.e_good_10)
        return AssignmentMatrix(p01=self.e_bad, p10=self.e_bad if self.e_bad_10 is None else self.e_bad_10)

    def stationary_bad_fraction(self) -> float:
        total = self.rate_gb + self.rate_bg
        if total <= 0:
            return 1.0 if self.initial_regime == "bad" else 0.0
        return self.rate_gb / total


class RegimeTrajectory:
    """Piecewise-constant regime timeline over [0, duration]."""

    def __init__(self, switch_times: Sequence[float], regimes: Sequence[int], duration: float):
        times = np.asarray(switch_times, dtype=float)
        regs = np.asarray(regimes, dtype=np.int8)
        if duration <= 0:
            raise ValueError(f"Trajectory duration must be positive, got {duration}")
        if times.size == 0 or times[0] != 0.0 or times.size != regs.size:
            raise ValueError("Trajectory must start at time 0 with one regime per switch time")
        if np.any(np.diff(times) <= 0) or times[-1] > duration:
            raise ValueError("Switch times must increase strictly within the duration")
        self.switch_times = times
        self.regimes = regs
        self.duration = float(duration)

    @classmethod
    def constant(cls, regime: int, duration: float) -> "RegimeTrajectory":
        return cls([0.0], [regime], duration)

    @classmethod
    def from_windows(cls, windows: Sequence[Tuple[float, float]], duration: float) -> "RegimeTrajectory":
        """Bad regime inside each [start, stop) window, good elsewhere."""
        times, regimes = [0.0], [GOOD]
        last_stop = 0.0
        for start, stop in sorted(windows):
            start, stop = max(0.0, float(start)), min(float(duration), float(stop))
            if stop <= start:
                continue
            if start < last_stop:
                raise ValueError(f"Overlapping bad windows at {start}")
            last_stop = stop
            if start == times[-1]:
                regimes[-1] = BAD
            else:
                times.append(start)
                regimes.append(BAD)
            if stop < duration:
                times.append(stop)
                regimes.append(GOOD)
        return cls(times, regimes, duration)

    def _check_times(self, times: np.ndarray):
        if np.any(times < 0) or np.any(times > self.duration):
            raise TrajectoryRangeError(f"Time outside trajectory [0, {self.duration}]")

    def regime_at(self, time: float) -> int:
        self._check_times(np.asarray([time], dtype=float))
        return int(self.regimes[np.searchsorted(self.switch_times, time, side="right") - 1])

    def regimes_at(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        self._check_times(times)
        return self.regimes[np.searchsorted(self.switch_times, times, side="right") - 1]

    def segments(self) -> List[Tuple[float, float, int]]:
        stops = np.append(self.switch_times[1:], self.duration)
        return [(float(a), float(b), int(r)) for a, b, r in zip(self.switch_times, stops, self.regimes)]

    def bad_fraction(self) -> float:
        bad = sum(stop - start for start, stop, regime in self.segments() if regime == BAD)
        return bad / self.duration

    def __repr__(self):
        return f"RegimeTrajectory(switches={self.switch_times.size - 1}, bad_fraction={self.bad_fraction():.3f})"


def sample_regime_trajectory(proc: TelegraphProcess, duration: float, seed: int) -> RegimeTrajectory:
    """Exponential holding times with the current regime's exit rate."""
    if duration <= 0:
        raise ValueError(f"Trajectory duration must be positive, got {duration}")
    rng = np.random.default_rng(seed)

    if proc.initial_regime == "stationary":
        regime = BAD if rng.random() < proc.stationary_bad_fraction() else GOOD
    else:
        regime = BAD if proc.initial_regime == "bad" else GOOD

    times, regimes = [0.0], [regime]
    t = 0.0
    while True:
        rate = proc.rate_gb if regime == GOOD else proc.rate_bg
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= duration:
            break
        if t <= times[-1]:
            # holding time below float resolution; the switch lands on the previous instant
            regimes[-1] = 1 - regime
        else:
            times.append(t)
            regimes.append(1 - regime)
        regime = 1 - regime
    return RegimeTrajectory(times, regimes, duration)


class DetectorModel:
    """Per-qubit static assignment plus optional telegraph processes and their sampled trajectories."""

    def __init__(self, static: Sequence[AssignmentMatrix],
                 telegraph: Optional[Mapping[int, TelegraphProcess]] = None,
                 trajectories: Optional[Mapping[int, RegimeTrajectory]] = None,
                 basis_flips: Optional[Mapping[str, float]] = None):
        self.static = list(static)
        self.telegraph: Dict[int, TelegraphProcess] = dict(telegraph or {})
        self.trajectories: Dict[int, RegimeTrajectory] = dict(trajectories or {})
        self.basis_flips: Dict[str, float] = {b: float(e) for b, e in (basis_flips or {}).items() if e}

        for q in list(self.telegraph) + list(self.trajectories):
            if not 0 <= q < len(self.static):
                raise DimensionMismatchError(f"Telegraph qubit {q} outside 0..{len(self.static) - 1}")
        for basis in self.basis_flips:
            if basis not in BASIS_LABELS:
                raise ValueError(f"Illegal basis '{basis}' in basis flips")

    @classmethod
    def noiseless(cls, num_qubits: int) -> "DetectorModel":
        return cls([AssignmentMatrix.identity()] * num_qubits)

    @classmethod
    def uniform(cls, num_qubits: int, flip: float) -> "DetectorModel":
        return cls([AssignmentMatrix.symmetric(flip)] * num_qubits)

    @property
    def num_qubits(self) -> int:
        return len(self.static)

    def with_trajectories(self, duration: float, seed: int) -> "DetectorModel":
        """Copy with a freshly sampled trajectory for every telegraph qubit lacking one."""
        trajectories = dict(self.trajectories)
        for q, proc in sorted(self.telegraph.items()):
            if q not in trajectories:
                trajectories[q] = sample_regime_trajectory(proc, duration, derived_seed(seed, STREAM_TRAJECTORY, q))
                logger.info(f"Qubit {q}: sampled {trajectories[q]}")
        return DetectorModel(self.static, self.telegraph, trajectories, self.basis_flips)

    def _static_for(self, qubit: int, basis: Optional[Union[str, int]]) -> AssignmentMatrix:
        base = self.static[qubit]
        if basis is None:
            return base
        label = basis if isinstance(basis, str) else BASIS_LABELS[int(basis)]
        extra = self.basis_flips.get(label)
        return base.then(AssignmentMatrix.symmetric(extra)) if extra else base

    def _trajectory(self, qubit: int) -> RegimeTrajectory:
        if qubit not in self.trajectories:
            raise TrajectoryRangeError(f"No regime trajectory sampled for qubit {qubit}")
        return self.trajectories[qubit]

    def effective_assignment(self, qubit: int, time: float, basis: Optional[Union[str, int]] = None) -> AssignmentMatrix:
        if not 0 <= qubit < self.num_qubits:
            raise DimensionMismatchError(f"Qubit {qubit} outside 0..{self.num_qubits - 1}")
        static = self._static_for(qubit, basis)
        proc = self.telegraph.get(qubit)
        if proc is None:
            return static
        return static.then(proc.flip_matrix(self._trajectory(qubit).regime_at(time)))

    def assignment_tensor(self, times: Sequence[float]) -> np.ndarray:
        """(len(times), qubits, 3 bases, 2, 2) effective matrices, for bulk sampling."""
        times = np.asarray(times, dtype=float)
        out = np.empty((times.size, self.num_qubits, 3, 2, 2))
        for q in range(self.num_qubits):
            for b in range(3):
                out[:, q, b] = self._static_for(q, b).matrix()
            proc = self.telegraph.get(q)
            if proc is None:
                continue
            regimes = self._trajectory(q).regimes_at(times)
            flips = np.stack([proc.flip_matrix(GOOD).matrix(), proc.flip_matrix(BAD).matrix()])[regimes]
            out[:, q] = np.einsum("tij,tbjk->tbik", flips, out[:, q])
        return out

    def time_averaged_assignment(self, qubit: int, basis: Optional[Union[str, int]] = None,
                                 window: Optional[Tuple[float, float]] = None) -> AssignmentMatrix:
        """Duration-weighted mean of the effective matrix over `window` (default the whole trajectory)."""
        static = self._static_for(qubit, basis)
        proc = self.telegraph.get(qubit)
        if proc is None:
            return static
        trajectory = self._trajectory(qubit)
        start, stop = window if window is not None else (0.0, trajectory.duration)
        if start < 0 or stop > trajectory.duration or stop <= start:
            raise TrajectoryRangeError(f"Window [{start}, {stop}] outside trajectory [0, {trajectory.duration}]")

        total = np.zeros((2, 2))
        for seg_start, seg_stop, regime in trajectory.segments():
            overlap = min(stop, seg_stop) - max(start, seg_start)
            if overlap > 0:
                total += overlap * (proc.flip_matrix(regime).matrix() @ static.matrix())
        return AssignmentMatrix.from_matrix(total / (stop - start))


def effective_assignment(model: DetectorModel, qubit: int, time: float,
                         basis: Optional[Union[str, int]] = None) -> AssignmentMatrix:
    return model.effective_assignment(qubit, time, basis)


def time_averaged_effects(ideal: LocalPovm, model: DetectorModel, qubit: int,
                          window: Optional[Tuple[float, float]] = None) -> LocalPovm:
    """noisy_effects under the duration-weighted average assignment; the detector blending targets."""
    averaged = [model.time_averaged_assignment(qubit, b, window) for b in range(3)]
    return noisy_effects(ideal, averaged)


def trajectory_frame(model: DetectorModel) -> pd.DataFrame:
    """One row per segment start: time, qubit, regime, flip_probability."""
    rows = []
    for q in sorted(model.trajectories):
        proc = model.telegraph.get(q)
        for start, _, regime in model.trajectories[q].segments():
            flip = model.effective_assignment(q, start).p01 if proc is not None else model.static[q].p01
            rows.append({"time": start, "qubit": q, "regime": REGIME_NAMES[regime], "flip_probability": flip})
    return pd.DataFrame(rows, columns=["time", "qubit", "regime", "flip_probability"])
