"""Named random streams split from one root seed.

Each consumer of randomness draws from its own stream, so switching one
feature on or off (probes, message loss) never shifts the others.
"""

import numpy as np

STREAMS = ("topology", "demand", "arrivals", "probes", "events", "tiebreak")


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAMS.index(name),)))
