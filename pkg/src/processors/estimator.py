"""
Repeated-settings Monte Carlo estimator.

With S settings measured T times each, omega values are averaged per
setting first, so the variance splits into a between-settings part that
only more settings reduce and a within-setting part that more shots
reduce:

    Var = (<<w>_i^2> - <w>^2) / S + (<w^2> - <<w>_i^2>) / (S T)
"""
import itertools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from src.errors import DimensionMismatchError, EstimationError, NotApplicableError, RaggedShotsError
from src.logger import setup_logger
from src.processors.pauli_algebra import Observable, ProductState
from src.processors.povm_frames import OmegaEvaluator, ProductPovm
from src.processors.shot_simulator import SettingBlock, unique_rows

logger = setup_logger("Estimator")

# Relative size below which <w^2> - <w>^2 is treated as zero
_ZERO_SPREAD = 1e-14


@dataclass
class MomentAccumulator:
    """Running omega totals; accumulators over disjoint settings merge by addition."""

    settings: int = 0
    shots_per_setting: int = 0
    sum_omega: float = 0.0
    sum_omega_sq: float = 0.0
    sum_setting_mean_sq: float = 0.0

    @property
    def total_shots(self) -> int:
        return self.settings * self.shots_per_setting

    def add_setting(self, omegas: np.ndarray):
        omegas = np.asarray(omegas, dtype=float)
        self._check_shots(omegas.size)
        self.settings += 1
        self.sum_omega += float(omegas.sum())
        self.sum_omega_sq += float(np.dot(omegas, omegas))
        self.sum_setting_mean_sq += float(omegas.mean()) ** 2

    def _check_shots(self, shots: int):
        if self.settings and shots != self.shots_per_setting:
            raise RaggedShotsError(f"Setting with {shots} shots; expected {self.shots_per_setting}")
        self.shots_per_setting = shots

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if self.settings and other.settings and self.shots_per_setting != other.shots_per_setting:
            raise RaggedShotsError(
                f"Cannot merge T={self.shots_per_setting} with T={other.shots_per_setting}"
            )
        return MomentAccumulator(
            self.settings + other.settings,
            self.shots_per_setting or other.shots_per_setting,
            self.sum_omega + other.sum_omega,
            self.sum_omega_sq + other.sum_omega_sq,
            self.sum_setting_mean_sq + other.sum_setting_mean_sq,
        )

    def moments(self):
        """(<w>, <w^2>, <<w>_i^2>)"""
        if not self.settings:
            raise EstimationError("No settings accumulated")
        shots = self.total_shots
        return self.sum_omega / shots, self.sum_omega_sq / shots, self.sum_setting_mean_sq / self.settings


@dataclass
class EstimateReport:
    label: str
    settings: int
    shots_per_setting: int
    mean: float
    variance: float
    standard_error: float
    first_moment: float
    second_moment: float
    conditional_moment: float
    saving_factor: Optional[float] = None
    absolute_error: Optional[float] = None

    def with_reference(self, reference: float) -> "EstimateReport":
        return EstimateReport(**{**self.__dict__, "absolute_error": absolute_error(self, reference)})


def variance_from_moments(m1: float, m2: float, m_cond: float, settings: int, shots: int) -> float:
    return (m_cond - m1 * m1) / settings + (m2 - m_cond) / (settings * shots)


def saving_factor(moments: MomentAccumulator) -> float:
    """1 - (<w^2> - <<w>_i^2>) / (<w^2> - <w>^2), clamped to [0, 1]."""
    m1, m2, m_cond = moments.moments()
    spread = m2 - m1 * m1
    if spread <= _ZERO_SPREAD * max(abs(m2), 1e-300):
        raise NotApplicableError("Saving factor undefined for zero omega variance")
    return float(min(1.0, max(0.0, 1.0 - (m2 - m_cond) / spread)))


def absolute_error(report: EstimateReport, reference_energy: float) -> float:
    return abs(report.mean - reference_energy)


@dataclass
class SettingSums:
    """Per-setting omega sums in schedule order (order of first execution)."""

    setting_indices: np.ndarray
    shots_per_setting: int
    sum_omega: np.ndarray
    sum_omega_sq: np.ndarray

    def accumulator(self, count: Optional[int] = None) -> MomentAccumulator:
        count = len(self.setting_indices) if count is None else count
        shots = self.shots_per_setting
        means = self.sum_omega[:count] / shots
        return MomentAccumulator(count, shots, float(self.sum_omega[:count].sum()),
                                 float(self.sum_omega_sq[:count].sum()), float(np.dot(means, means)))


def setting_sums(obs: Observable, povm: ProductPovm, blocks: Sequence[SettingBlock],
                 evaluator: Optional[OmegaEvaluator] = None) -> SettingSums:
    """
    Group shots by setting index, evaluate omega once per distinct
    (setting, outcome) and total per setting. Blocks of one setting split
    over several executions are pooled.
    """
    if not blocks:
        raise EstimationError("No setting blocks to estimate from")
    if obs.num_qubits != povm.num_qubits or blocks[0].setting.size != obs.num_qubits:
        raise DimensionMismatchError(
            f"Observable on {obs.num_qubits} qubits, POVM on {povm.num_qubits}, shots on {blocks[0].setting.size}"
        )
    evaluator = evaluator or OmegaEvaluator(obs, povm)

    first_seen = {}
    settings = {}
    for block in blocks:
        key = block.setting_index
        order = (block.job_index, block.position)
        if key not in first_seen or order < first_seen[key]:
            first_seen[key] = order
        settings.setdefault(key, block.setting)
    indices = np.array(sorted(first_seen), dtype=np.int64)
    position_of = {int(k): i for i, k in enumerate(indices)}
    setting_table = np.stack([settings[int(k)] for k in indices]).astype(np.intp)

    sizes = np.array([b.shots for b in blocks])
    groups = np.repeat([position_of[b.setting_index] for b in blocks], sizes)
    group_ids, bits, counts = unique_rows(groups, np.concatenate([b.outcomes for b in blocks]))

    shots = np.bincount(group_ids, weights=counts, minlength=len(indices))
    if np.any(shots != shots[0]):
        raise RaggedShotsError(f"Settings carry between {int(shots.min())} and {int(shots.max())} shots")

    omegas = evaluator.evaluate(2 * setting_table[group_ids] + bits)
    sum_omega = np.bincount(group_ids, weights=counts * omegas, minlength=len(indices))
    sum_omega_sq = np.bincount(group_ids, weights=counts * omegas * omegas, minlength=len(indices))

    order = sorted(range(len(indices)), key=lambda i: first_seen[int(indices[i])])
    return SettingSums(indices[order], int(shots[0]), sum_omega[order], sum_omega_sq[order])


def report_from_moments(moments: MomentAccumulator, label: str = "") -> EstimateReport:
    m1, m2, m_cond = moments.moments()
    variance = variance_from_moments(m1, m2, m_cond, moments.settings, moments.shots_per_setting)
    if variance < 0:
        logger.warning(f"[{label}] Negative variance estimate {variance:.3e} clamped to 0")
        variance = 0.0
    try:
        saving = saving_factor(moments)
    except NotApplicableError:
        logger.warning(f"[{label}] Saving factor not applicable (zero omega variance)")
        saving = None
    return EstimateReport(label, moments.settings, moments.shots_per_setting, m1, variance, math.sqrt(variance),
                          m1, m2, m_cond, saving)


def estimate(obs: Observable, povm: ProductPovm, blocks: Sequence[SettingBlock], label: str = "",
             reference: Optional[float] = None) -> EstimateReport:
    sums = setting_sums(obs, povm, blocks)
    report = report_from_moments(sums.accumulator(), label)
    return report if reference is None else report.with_reference(reference)


def error_vs_shots_curve(blocks: Sequence[SettingBlock], obs: Observable, povm: ProductPovm,
                         grid: Sequence[int], reference: Optional[float] = None) -> pd.DataFrame:
    """
    Re-estimate on prefixes of the settings in execution order. Grid points
    are shot counts, rounded down to whole settings. Prefixes of a single
    setting report no standard error.
    """
    grid = [int(g) for g in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("Shot grid must be strictly increasing")
    sums = setting_sums(obs, povm, blocks)
    shots = sums.shots_per_setting
    available = len(sums.setting_indices)
    if grid and grid[-1] > available * shots:
        raise ValueError(f"Grid reaches {grid[-1]} shots but only {available * shots} were taken")

    cum_omega = np.cumsum(sums.sum_omega)
    cum_omega_sq = np.cumsum(sums.sum_omega_sq)
    cum_mean_sq = np.cumsum((sums.sum_omega / shots) ** 2)

    rows = []
    for point in grid:
        count = min(available, max(1, point // shots))
        total = count * shots
        m1 = cum_omega[count - 1] / total
        m2 = cum_omega_sq[count - 1] / total
        m_cond = cum_mean_sq[count - 1] / count
        std_err = None
        if count >= 2:
            std_err = math.sqrt(max(0.0, variance_from_moments(m1, m2, m_cond, count, shots)))
        rows.append({
            "shots": total, "settings": count, "mean": m1, "standard_error": std_err,
            "absolute_error": None if reference is None else abs(m1 - reference),
        })
    return pd.DataFrame(rows, columns=["shots", "settings", "mean", "standard_error", "absolute_error"])


def log_grid(total_shots: int, shots_per_setting: int, points: int) -> List[int]:
    """Roughly log-spaced shot counts from two settings up to everything."""
    low = 2 * shots_per_setting
    if total_shots <= low or points < 2:
        return [total_shots]
    raw = np.geomspace(low, total_shots, points)
    grid = sorted({int(g) // shots_per_setting * shots_per_setting for g in raw} | {total_shots})
    return [g for g in grid if g >= low]


@dataclass
class ExactMoments:
    first: float
    second: float
    conditional: float

    def accumulator_like(self, settings: int, shots: int) -> MomentAccumulator:
        return MomentAccumulator(settings, shots, self.first * settings * shots,
                                 self.second * settings * shots, self.conditional * settings)


def exact_moments(obs: Observable, estimation_povm: ProductPovm, state: ProductState,
                  physical_povm: Optional[ProductPovm] = None, max_qubits: int = 6) -> ExactMoments:
    """
    Population moments of omega by enumerating every setting and outcome.
    Outcomes follow `physical_povm` (default: the estimation POVM itself).
    """
    n = obs.num_qubits
    if n > max_qubits:
        raise ValueError(f"Exact enumeration limited to {max_qubits} qubits, got {n}")
    physical = physical_povm or estimation_povm
    if physical.num_qubits != n or state.num_qubits != n:
        raise DimensionMismatchError("Observable, POVMs and state must share the qubit count")

    rho = state.density_matrices()
    # joint[q, 2b + o] = Pr(basis b chosen and outcome o) on qubit q
    joint = np.stack([p.probabilities(rho[q]) for q, p in enumerate(physical.povms)])
    evaluator = OmegaEvaluator(obs, estimation_povm)

    settings = np.array(list(itertools.product(range(3), repeat=n)), dtype=np.intp).reshape(-1, n)
    outcomes = np.array(list(itertools.product(range(2), repeat=n)), dtype=np.intp).reshape(-1, n)
    local = 2 * settings[:, None, :] + outcomes[None, :, :]
    probs = np.prod(joint[np.arange(n), local], axis=-1)
    omegas = evaluator.evaluate(local.reshape(-1, n)).reshape(probs.shape)

    weight = probs.sum(axis=1)
    first = float(np.sum(probs * omegas))
    second = float(np.sum(probs * omegas ** 2))
    conditional_means = np.divide((probs * omegas).sum(axis=1), weight, out=np.zeros_like(weight), where=weight > 0)
    conditional = float(np.sum(weight * conditional_means ** 2))
    return ExactMoments(first, second, conditional)


def predicted_variance(moments: ExactMoments, settings: int, shots: int) -> float:
    return variance_from_moments(moments.first, moments.second, moments.conditional, settings, shots)
