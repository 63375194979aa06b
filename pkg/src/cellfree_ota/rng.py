"""Named, round-keyed random streams derived from one master seed."""

import numpy as np

PLACEMENT = 0
FADING = 1
NOISE = 2
DATA = 3
BATCH = 4


def stream(seed, name, *keys):
    """Return a generator for ``(seed, name, *keys)``.

    Streams with different keys are statistically independent, so a round's
    draws do not depend on the order in which rounds are evaluated.
    """
    return np.random.default_rng([int(seed), int(name), *(int(k) for k in keys)])
