import concurrent.futures
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.config_manager import ConfigManager, validate_config
from src.errors import ConfigError, DimensionMismatchError, ExperimentError, ThresholdError, ToolkitError
from src.logger import setup_logger
from src.models import ExperimentConfig, NoiseConfig
from src.processors.detector_noise import AssignmentMatrix, DetectorModel, RegimeTrajectory, trajectory_frame
from src.processors.estimator import EstimateReport, error_vs_shots_curve, estimate, log_grid
from src.processors.pauli_algebra import (
    Observable,
    ProductState,
    exact_expectation,
    load_observable,
    random_observable,
    save_observable,
)
from src.processors.povm_frames import BasisDistribution, ProductPovm, lbcs_bias, load_povms, save_povms
from src.processors.qdt import (
    QdtFit,
    RecoverySettings,
    TomographyData,
    fit_all,
    marginalize_counts,
    tally_records,
)
from src.processors.scheduler import (
    BLENDED,
    LEADING,
    JobCaps,
    Schedule,
    blended_schedule,
    compare_qdt_consistency,
    drift_monitor,
    regular_schedule,
)
from src.processors.shot_simulator import (
    SimulationResult,
    read_qdt_records,
    read_shot_stream,
    sample_settings,
    simulate_schedule,
    write_qdt_records,
    write_shot_stream,
)
from src.reporting import write_reports
from src.utils import STREAM_NOISE, derived_seed, safe_label, sub_seeds

logger = setup_logger("Pipeline")

IDEAL = "ideal"
QDT_LABEL = "qdt"
BASELINE = "qdt_baseline"

CONFIG_JSON = "config.json"
OBSERVABLE_TXT = "observable.txt"
SHOTS_CSV = "shots.csv"
QDT_RECORDS_CSV = "qdt_records.csv"
TOMOGRAPHY_CSV = "tomography.csv"
SCHEDULE_CSV = "schedule.csv"
TRAJECTORY_CSV = "trajectory.csv"
POVM_FILES = {IDEAL: "povm_ideal.json", QDT_LABEL: "povm_qdt.json", BASELINE: "povm_qdt_baseline.json"}


@dataclass
class RunBundle:
    """In-memory result of one repetition; `directory` is None when nothing was written."""

    label: str
    seed: int
    num_qubits: int
    reference: float
    reports: Dict[str, EstimateReport]
    curves: Dict[str, pd.DataFrame] = field(default_factory=dict)
    fits: Dict[str, List[QdtFit]] = field(default_factory=dict)
    directory: Optional[str] = None
    primary: str = IDEAL

    @property
    def primary_report(self) -> EstimateReport:
        return self.reports[self.primary]


def build_observable(config: ExperimentConfig) -> Observable:
    source = config.observable
    if source.path is not None:
        return load_observable(source.path)
    generator = source.random
    return random_observable(generator.num_qubits, generator.num_terms, generator.coefficient_scale, generator.seed,
                             axis_weights=generator.axis_weights, max_weight=generator.max_weight,
                             weight_decay=generator.weight_decay, reference_bits=generator.reference_bits)


def build_state(config: ExperimentConfig) -> ProductState:
    if config.state.bitstring is not None:
        return ProductState.from_bitstring(config.state.bitstring)
    return ProductState.from_bloch_angles(config.state.bloch_angles)


def basis_distributions(config: ExperimentConfig, obs: Observable) -> List[BasisDistribution]:
    if config.scheme.name == "LBCS":
        return lbcs_bias(obs, config.scheme.floor)
    return [BasisDistribution.symmetric(config.scheme.floor)] * obs.num_qubits


def static_flips(noise: NoiseConfig, num_qubits: int) -> List[float]:
    if noise.static_flips is not None:
        return list(noise.static_flips)
    if noise.static_flip_range is not None:
        low, high = noise.static_flip_range
        rng = np.random.default_rng(derived_seed(noise.seed, STREAM_NOISE))
        return [float(f) for f in rng.uniform(low, high, num_qubits)]
    return [noise.static_flip or 0.0] * num_qubits


def build_detector_model(noise: NoiseConfig, num_qubits: int, duration: float, seed: int) -> DetectorModel:
    """Static matrices from the config; telegraph qubits get explicit windows or a trajectory sampled from `seed`."""
    static = [AssignmentMatrix.symmetric(f) for f in static_flips(noise, num_qubits)]
    telegraph = {entry.qubit: entry.process() for entry in noise.telegraph}
    windows = {
        entry.qubit: RegimeTrajectory.from_windows([(a * duration, b * duration) for a, b in entry.bad_windows],
                                                   duration)
        for entry in noise.telegraph if entry.bad_windows is not None
    }
    model = DetectorModel(static, telegraph, windows, noise.basis_flips)
    return model.with_trajectories(duration, seed)


def build_schedule(config: ExperimentConfig) -> Schedule:
    caps = JobCaps(config.schedule.circuits_per_job, config.schedule.shots_per_circuit)
    experiment_shots = [config.shots] * config.settings
    slot = config.schedule.slot_seconds
    if not config.qdt.enabled:
        return regular_schedule(experiment_shots, 0, caps, slot)
    if config.schedule.mode == "regular":
        return regular_schedule(experiment_shots, config.qdt.regular_shots, caps, slot)
    return blended_schedule(experiment_shots, config.qdt.repeats_per_job, config.qdt.shots_per_instance, caps,
                            baseline_shots=config.qdt.baseline_shots, slot_seconds=slot)


def recovery_settings(config: ExperimentConfig) -> RecoverySettings:
    return RecoverySettings(max_iterations=config.qdt.max_iterations, tolerance=config.qdt.tolerance,
                            step_tolerance=config.qdt.step_tolerance)


def _run_repetition(config: ExperimentConfig, seed: int, directory: Optional[str]) -> RunBundle:
    return ExperimentPipeline().run_single(config, seed, directory)


class ExperimentPipeline:
    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir

    def _bundle_root(self, config: ExperimentConfig) -> str:
        return os.path.join(self.output_dir or config.output_dir, safe_label(config.label) or "experiment")

    def run(self, config: ExperimentConfig, progress_callback: Optional[Callable] = None,
            persist: bool = True) -> List[RunBundle]:
        """All repetitions of one config; each gets its own sub-seed and bundle folder."""
        seeds = sub_seeds(config.seed, config.repetitions)
        root = self._bundle_root(config)
        if config.repetitions == 1:
            directories = [root]
        else:
            directories = [os.path.join(root, f"rep_{i:03d}") for i in range(config.repetitions)]
        if not persist:
            directories = [None] * len(seeds)

        logger.info(f"Running '{config.label}': {config.repetitions} repetition(s), seed {config.seed}")
        try:
            if config.repetitions > 1 and config.workers > 1:
                single = config.model_copy(update={"workers": 1})
                with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as executor:
                    futures = [executor.submit(_run_repetition, single, s, d) for s, d in zip(seeds, directories)]
                    bundles = []
                    for idx, future in enumerate(futures):
                        bundles.append(future.result())
                        if progress_callback:
                            progress_callback((idx + 1) / len(futures), f"Repetition {idx + 1}/{len(futures)} done")
            else:
                bundles = []
                for idx, (s, d) in enumerate(zip(seeds, directories)):
                    if progress_callback:
                        progress_callback(idx / len(seeds), f"Repetition {idx + 1}/{len(seeds)}")
                    bundles.append(self.run_single(config, s, d))
        except ConfigError:
            raise
        except (ToolkitError, ValueError) as e:
            logger.error(f"[{config.label}] {e}")
            raise ExperimentError(f"{config.label}: {e}") from e

        if progress_callback:
            progress_callback(1.0, "Done")
        return bundles

    def run_single(self, config: ExperimentConfig, seed: int, directory: Optional[str] = None) -> RunBundle:
        obs = build_observable(config)
        state = build_state(config)
        if obs.num_qubits != state.num_qubits:
            raise ConfigError(f"{config.label}: observable on {obs.num_qubits} qubits, state on {state.num_qubits}")
        n = obs.num_qubits

        dists = basis_distributions(config, obs)
        ideal_povm = ProductPovm.ideal(dists)
        settings = sample_settings(dists, config.settings, seed)
        schedule = build_schedule(config)
        model = build_detector_model(config.noise, n, schedule.duration, seed)
        threads = config.workers if config.repetitions == 1 else 1
        result = simulate_schedule(state, settings, model, schedule, seed, workers=threads)
        reference = exact_expectation(obs, state)

        reports = {IDEAL: estimate(obs, ideal_povm, result.blocks, IDEAL, reference)}
        povms = {IDEAL: ideal_povm}
        fits = {}
        groups = {QDT_LABEL: BLENDED if schedule.mode == "blended" else LEADING}
        if schedule.mode == "blended" and config.qdt.baseline_shots > 0:
            groups[BASELINE] = LEADING
        for label, group in groups.items():
            data = TomographyData.from_records(result.qdt_records, n, group)
            if not data.counts.any():
                continue
            fits[label] = fit_all(data, recovery_settings(config), dists, workers=threads)
            povms[label] = ProductPovm([fit.povm_for(d) for fit, d in zip(fits[label], dists)])
            reports[label] = estimate(obs, povms[label], result.blocks, label, reference)

        primary = QDT_LABEL if config.use_qdt_effects and QDT_LABEL in reports else IDEAL
        curves = {}
        if config.curve_points > 0:
            grid = log_grid(config.settings * config.shots, config.shots, config.curve_points)
            curves = {label: error_vs_shots_curve(result.blocks, obs, povms[label], grid, reference)
                      for label in reports}

        for report in reports.values():
            logger.info(
                f"[{config.label}/{report.label}] mean={report.mean:.6f} std_err={report.standard_error:.3e} "
                f"abs_err={report.absolute_error:.3e} (reference {reference:.6f})"
            )

        bundle = RunBundle(config.label, seed, n, reference, reports, curves, fits, directory, primary)
        if directory is not None:
            self._write_bundle(directory, config, obs, povms, schedule, model, result, bundle)
        return bundle

    def _write_bundle(self, directory: str, config: ExperimentConfig, obs: Observable,
                      povms: Dict[str, ProductPovm], schedule: Schedule, model: DetectorModel,
                      result: SimulationResult, bundle: RunBundle):
        os.makedirs(directory, exist_ok=True)
        ConfigManager(os.path.join(directory, CONFIG_JSON)).save_config(config)
        save_observable(obs, os.path.join(directory, OBSERVABLE_TXT))
        for label, povm in povms.items():
            save_povms(povm.povms, os.path.join(directory, POVM_FILES[label]))
        write_shot_stream(result.blocks, os.path.join(directory, SHOTS_CSV))
        write_qdt_records(result.qdt_records, os.path.join(directory, QDT_RECORDS_CSV))
        if result.qdt_records:
            group = BLENDED if schedule.mode == "blended" else LEADING
            TomographyData.from_records(result.qdt_records, obs.num_qubits, group).save(
                os.path.join(directory, TOMOGRAPHY_CSV))
        schedule.to_frame().to_csv(os.path.join(directory, SCHEDULE_CSV), index=False)
        if model.trajectories:
            trajectory_frame(model).to_csv(os.path.join(directory, TRAJECTORY_CSV), index=False)

        metadata = {"label": config.label, "seed": bundle.seed, "num_qubits": bundle.num_qubits,
                    "reference": bundle.reference, "primary": bundle.primary}
        write_reports(directory, list(bundle.reports.values()), bundle.curves, metadata)
        logger.info(f"Bundle written to {directory}")

    def replay(self, bundle_dir: str) -> Dict[str, EstimateReport]:
        """Re-estimate every report of a bundle from its shot stream and POVM files."""
        config = load_bundle_config(bundle_dir)
        obs = load_observable(os.path.join(bundle_dir, OBSERVABLE_TXT))
        reference = exact_expectation(obs, build_state(config))
        blocks = read_shot_stream(os.path.join(bundle_dir, SHOTS_CSV))

        reports = {}
        for label, name in POVM_FILES.items():
            path = os.path.join(bundle_dir, name)
            if os.path.isfile(path):
                reports[label] = estimate(obs, load_povms(path), blocks, label, reference)
        return reports

    def run_qdt(self, config: ExperimentConfig, directory: Optional[str] = None) -> List[QdtFit]:
        """Stand-alone tomography: the twelve circuits at `qdt.regular_shots` each, no experiment."""
        n = config.state.num_qubits
        caps = JobCaps(config.schedule.circuits_per_job, config.schedule.shots_per_circuit)
        try:
            schedule = regular_schedule([], config.qdt.regular_shots, caps, config.schedule.slot_seconds)
            model = build_detector_model(config.noise, n, schedule.duration, config.seed)
            result = simulate_schedule(build_state(config), np.zeros((0, n), dtype=np.int8), model, schedule,
                                       config.seed, workers=config.workers)
            data = TomographyData.from_records(result.qdt_records, n)
            dists = basis_distributions(config, build_observable(config))
            fits = fit_all(data, recovery_settings(config), dists, workers=config.workers)
        except ConfigError:
            raise
        except (ToolkitError, ValueError) as e:
            logger.error(f"[{config.label}] {e}")
            raise ExperimentError(f"{config.label}: {e}") from e

        if directory is not None:
            os.makedirs(directory, exist_ok=True)
            data.save(os.path.join(directory, TOMOGRAPHY_CSV))
            save_povms([fit.povm for fit in fits], os.path.join(directory, POVM_FILES[QDT_LABEL]))
        return fits

    def compare_schemes(self, cs_config: ExperimentConfig, lbcs_config: ExperimentConfig,
                        persist: bool = False) -> pd.DataFrame:
        """Paired CS/LBCS runs on shared seeds; one row per seed."""
        check_scheme_pair(cs_config, lbcs_config)
        seeds = sub_seeds(cs_config.seed, cs_config.repetitions)
        rows = []
        try:
            for seed in seeds:
                pair = {}
                for config in (cs_config, lbcs_config):
                    directory = None
                    if persist:
                        directory = os.path.join(self._bundle_root(config), f"seed_{seed}")
                    pair[config.scheme.name] = self.run_single(config, seed, directory).primary_report
                rows.append({
                    "seed": seed,
                    "num_qubits": cs_config.state.num_qubits,
                    "cs_std_err": pair["CS"].standard_error,
                    "lbcs_std_err": pair["LBCS"].standard_error,
                    "cs_abs_err": pair["CS"].absolute_error,
                    "lbcs_abs_err": pair["LBCS"].absolute_error,
                    "lbcs_better": pair["LBCS"].standard_error < pair["CS"].standard_error,
                })
        except ConfigError:
            raise
        except (ToolkitError, ValueError) as e:
            logger.error(f"[{cs_config.label}/{lbcs_config.label}] {e}")
            raise ExperimentError(f"{cs_config.label}/{lbcs_config.label}: {e}") from e

        table = pd.DataFrame(rows)
        logger.info(f"LBCS beats CS on {int(table['lbcs_better'].sum())}/{len(table)} seeds")
        return table

    def monitor(self, bundle_dir: str, qubit: int, basis: str = "Z", expected_outcome: int = 0):
        """Per-job drift series of the experiment data plus the tomography consistency table."""
        config = load_bundle_config(bundle_dir)
        n = config.state.num_qubits
        if not 0 <= qubit < n:
            raise DimensionMismatchError(f"Qubit {qubit} outside the {n}-qubit bundle {bundle_dir}")
        blocks = read_shot_stream(os.path.join(bundle_dir, SHOTS_CSV))
        records = read_qdt_records(os.path.join(bundle_dir, QDT_RECORDS_CSV))
        series = drift_monitor(blocks, qubit, basis, expected_outcome)

        input_label = config.state.bitstring[qubit] if config.state.bitstring is not None else "0"
        consistency = compare_qdt_consistency(
            tally_records(records, qubit, input_label, basis, BLENDED),
            tally_records(records, qubit, input_label, basis, LEADING),
            marginalize_counts(blocks, qubit, basis),
            outcome=expected_outcome,
        )
        return series, consistency


def load_bundle_config(bundle_dir: str) -> ExperimentConfig:
    path = os.path.join(bundle_dir, CONFIG_JSON)
    if not os.path.isfile(path):
        raise ConfigError(f"No {CONFIG_JSON} in {bundle_dir}")
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    # the bundle carries its own observable copy
    data["observable"] = {"path": os.path.join(os.path.abspath(bundle_dir), OBSERVABLE_TXT), "random": None}
    return validate_config(data, bundle_dir, source=path)


def check_scheme_pair(cs_config: ExperimentConfig, lbcs_config: ExperimentConfig):
    if cs_config.scheme.name != "CS" or lbcs_config.scheme.name != "LBCS":
        raise ConfigError("compare needs a CS config followed by an LBCS config")
    shared = ("observable", "state", "noise", "settings", "shots", "schedule", "qdt", "use_qdt_effects", "seed",
              "repetitions")
    for key in shared:
        if getattr(cs_config, key) != getattr(lbcs_config, key):
            raise ConfigError(f"Scheme pair differs in '{key}'")


def check_thresholds(bundle: RunBundle, config: ExperimentConfig):
    """Raise ThresholdError when a configured acceptance threshold fails."""
    limits = config.thresholds
    failures = []

    def sigmas(label):
        report = bundle.reports[label]
        if not report.standard_error:
            return float("inf") if report.absolute_error else 0.0
        return report.absolute_error / report.standard_error

    if limits.qdt_max_sigma is not None:
        if QDT_LABEL not in bundle.reports:
            failures.append("no QDT estimate to check")
        elif sigmas(QDT_LABEL) >= limits.qdt_max_sigma:
            failures.append(f"QDT error {sigmas(QDT_LABEL):.2f} sigma >= {limits.qdt_max_sigma}")
    if limits.ideal_min_sigma is not None and sigmas(IDEAL) <= limits.ideal_min_sigma:
        failures.append(f"ideal-effects error {sigmas(IDEAL):.2f} sigma <= {limits.ideal_min_sigma}")
    if failures:
        raise ThresholdError(f"{bundle.label} (seed {bundle.seed}): " + "; ".join(failures))
