import copy

import pytest

# Small-but-complete configuration used across controller/cli/acceptance
# plumbing tests: a 2-tier ladder, tiny nets, a budget that allows a dozen
# active-learning steps, and fast retrains.
MICRO_CONFIG = {
    "seeds": [0],
    "environment": {"seed": 5, "alphabet_size": 6, "length": 6,
                    "rho": [0.6, 1.0], "noise": [0.3, 0.0], "cost": [1.0, 10.0]},
    "model": {"latent_dim": 6, "hidden": 24, "kernel_hidden": 12,
              "embed_dim": 4, "inducing": 8},
    "training": {"learning_rate": 0.005, "batch_size": 16, "max_steps": 120,
                 "eval_interval": 30, "patience": 2},
    "generation": {"batch_points": 4, "opt_steps": 30},
    "controller": {"seed_low": 24, "seed_high": 4, "n_final": 4,
                   "final_attempts": 10},
    "budget": {"max_cost": 80.0},
}


@pytest.fixture
def micro_config_dict():
    return copy.deepcopy(MICRO_CONFIG)
