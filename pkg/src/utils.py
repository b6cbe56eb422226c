from typing import List, Sequence

import numpy as np

BASIS_LABELS = "XYZ"

# Independent seed streams derived from one experiment seed
STREAM_SETTINGS = 1
STREAM_NOISE = 2
STREAM_TRAJECTORY = 3
STREAM_SHOTS = 4


def derived_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit seed for the stream identified by `keys` under `seed`."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def sub_seeds(seed: int, count: int) -> List[int]:
    """Distinct child seeds, e.g. one per experiment repetition."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def circuit_rng(seed: int, job: int, position: int) -> np.random.Generator:
    """
    Counter-based stream for one circuit execution.

    Keyed by (seed, job, position in job); draws are then indexed by (shot, qubit),
    so the samples never depend on how circuits are split across workers.
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAM_SHOTS, int(job), int(position)))
    return np.random.Generator(np.random.Philox(sequence))


def safe_label(text: str) -> str:
    return "".join(c for c in text if c.isalnum() or c in ('_', '-')).strip()


def setting_to_string(bases: Sequence[int]) -> str:
    return "".join(BASIS_LABELS[int(b)] for b in bases)


def setting_from_string(text: str) -> np.ndarray:
    try:
        return np.array([BASIS_LABELS.index(c) for c in text], dtype=np.int8)
    except ValueError:
        raise ValueError(f"Illegal basis string '{text}'")
