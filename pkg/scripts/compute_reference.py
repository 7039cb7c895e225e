"""Recompute the frozen random-policy reference return for the reach arm.

The value printed here is stored as harness.REACH_RANDOM_POLICY_RETURN and
serves as the baseline for the desk-scale learning checks.
"""

import numpy as np

from faultadapt import envs
from faultadapt.numerics import RngStream, derive_seed


def random_policy_return(episodes: int = 1000) -> float:
    cfg = envs.reach_arm_config()
    rng = RngStream(derive_seed(0xC0FFEE, episodes), "random-policy-oracle")
    returns = []
    for _ in range(episodes):
        state, _ = envs.reset(cfg, rng.next_seed())
        total, done = 0.0, False
        while not done:
            result = envs.step(cfg, state, rng.gen.uniform(-1.0, 1.0, cfg.action_dim))
            total += result.reward
            done = result.done
        returns.append(total)
    return float(np.mean(returns))


if __name__ == "__main__":
    value = random_policy_return()
    print(f"REACH_RANDOM_POLICY_RETURN = {value!r}")
