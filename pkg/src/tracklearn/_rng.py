"""Labelled seed substreams derived from one master seed."""

import numpy as np

WORLD = 1
STATIC_DETECTOR = 2
EVALUATION = 3
STATIC_EVALUATION = 4
FEATURE_MEANS = 5
SEED_SAMPLES = 6


def substream(master_seed: int, label: int) -> np.random.SeedSequence:
    # spawn_key keeps substreams disjoint, adding a label never shifts another
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(label),))


def generator(master_seed: int, label: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream(master_seed, label)))
