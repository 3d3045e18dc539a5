import os

import numpy as np

from lporl.linmdp import Policy

TESTS_DATA_DIR = os.path.join(
    os.path.abspath(os.path.dirname(__file__)),
    'sample_data'
)


def random_policy(num_states, num_actions, seed):
    """Strictly positive random policy table."""
    rng = np.random.default_rng(seed)
    return Policy(rng.dirichlet(np.ones(num_actions), size=num_states))
