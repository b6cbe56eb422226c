import json
import os

from src.processors.pauli_algebra import random_observable, save_observable

ASSETS_DIR = "assets"

# Relative I, X, Y, Z frequencies; molecular qubit Hamiltonians are dominated by Z strings
Z_HEAVY = [0.3, 0.05, 0.05, 0.6]
# Half-filled reference determinant the 8-qubit scenarios are measured on
REFERENCE_8Q = "11110000"

# Low-weight terms whose coefficients shrink with weight, diagonal part aligned to the reference
CHEMISTRY_8Q = dict(num_qubits=8, num_terms=361, coefficient_scale=0.2, seed=8, axis_weights=Z_HEAVY,
                    max_weight=3, weight_decay=0.25, reference_bits=REFERENCE_8Q)


def create_dirs(root: str = ASSETS_DIR):
    for d in [root, os.path.join(root, "hamiltonians"), os.path.join(root, "configs"), "output"]:
        os.makedirs(d, exist_ok=True)
        print(f"Created directory: {d}")


def create_hamiltonians(root: str = ASSETS_DIR):
    specs = {
        "random_8q_361.txt": CHEMISTRY_8Q,
        "skewed_8q.txt": dict(num_qubits=8, num_terms=120, coefficient_scale=0.5, seed=81,
                              axis_weights=Z_HEAVY, max_weight=4),
        "skewed_12q.txt": dict(num_qubits=12, num_terms=200, coefficient_scale=0.5, seed=121,
                               axis_weights=Z_HEAVY, max_weight=4),
        "random_4q.txt": dict(num_qubits=4, num_terms=30, coefficient_scale=1.0, seed=4),
    }
    for name, kwargs in specs.items():
        path = os.path.join(root, "hamiltonians", name)
        save_observable(random_observable(**kwargs), path)
        print(f"  Generated {path}")


def _config(label, hamiltonian, bitstring, settings, shots, **extra):
    config = {
        "label": label,
        "seed": 2024,
        "observable": {"path": os.path.join("..", "hamiltonians", hamiltonian)},
        "state": {"bitstring": bitstring},
        "settings": settings,
        "shots": shots,
    }
    config.update(extra)
    return config


def create_configs(root: str = ASSETS_DIR):
    configs = {
        # static readout errors of 1-5%, blended tomography shaped like a 278-job run
        "bias_reduction.json": _config(
            "bias_reduction", "random_8q_361.txt", REFERENCE_8Q, 70000, 100,
            scheme={"name": "LBCS", "floor": 0.01},
            noise={"static_flip_range": [0.01, 0.05], "seed": 7},
            qdt={"enabled": True, "repeats_per_job": 4, "shots_per_instance": 100},
            thresholds={"qdt_max_sigma": 4.0, "ideal_min_sigma": 5.0},
        ),
        "scaling.json": _config(
            "scaling", "random_4q.txt", "0101", 20000, 10,
            qdt={"enabled": False}, use_qdt_effects=False, curve_points=16,
        ),
        "variance_fidelity.json": _config(
            "variance_fidelity", "random_4q.txt", "0000", 500, 20,
            qdt={"enabled": False}, use_qdt_effects=False, repetitions=200, workers=4, curve_points=0,
        ),
        # one bad readout window on qubit 0 covering about a fifth of the run; the stale baseline
        # misses a flip shift of ~0.014 on a single qubit, hence more settings than the static scenario
        "telegraph_blending.json": _config(
            "telegraph_blending", "random_8q_361.txt", REFERENCE_8Q, 300000, 10,
            scheme={"name": "LBCS", "floor": 0.01},
            noise={"static_flip": 0.0, "telegraph": [
                {"qubit": 0, "e_good": 0.015, "e_bad": 0.08, "bad_windows": [[0.40, 0.62]]}
            ]},
            qdt={"enabled": True, "repeats_per_job": 4, "shots_per_instance": 100, "baseline_shots": 100000},
            thresholds={"qdt_max_sigma": 4.0},
            curve_points=0,
        ),
        "qdt_single.json": _config(
            "qdt_single", "random_4q.txt", "0000", 1, 1,
            noise={"static_flip": 0.02},
            schedule={"shots_per_circuit": 100000},
            qdt={"regular_shots": 100000},
        ),
    }
    for size in (8, 12):
        for scheme in ("CS", "LBCS"):
            name = f"{scheme.lower()}_{size}q.json"
            configs[name] = _config(
                f"{scheme.lower()}_{size}q", f"skewed_{size}q.txt", "0" * size, 2000, 10,
                scheme={"name": scheme, "floor": 0.01}, qdt={"enabled": False}, use_qdt_effects=False,
                repetitions=20, curve_points=0,
            )

    for name, config in configs.items():
        path = os.path.join(root, "configs", name)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(config, f, indent=4)
        print(f"  Generated {path}")


if __name__ == "__main__":
    create_dirs()
    create_hamiltonians()
    create_configs()
    print("Success! Example Hamiltonians and experiment configs generated.")
