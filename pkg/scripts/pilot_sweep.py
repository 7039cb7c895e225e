"""Short-budget hyperparameter sweeps used to pick the acceptance experiment
configs for the kinematic analog environments."""

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from threadpoolctl import threadpool_limits

from faultadapt import continual
from faultadapt.config import parse_config_dict


def run_one(args):
    name, env_kind, algo, overrides, steps, eval_every, seed = args
    doc = {"experiment_id": name, "env": {"kind": env_kind},
           "algorithm": {"name": algo, **overrides}}
    xc = parse_config_dict(doc)
    streams = continual.SeedStreams.from_seed(seed)
    total = (continual.ppo_total_updates(steps, xc.algo_config.n_steps)
             if algo == "ppo" else 1)
    agent = continual.new_agent(algo, xc.algo_config, xc.env, streams.init, total)
    storage = continual.new_storage(algo, xc.algo_config, xc.env)
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        curve = continual.train_phase(algo, agent, storage, xc.env, steps, seed,
                                      streams, eval_every, 10)
    dt = time.perf_counter() - t0
    tail = [round(r.mean_return, 3) for r in curve.records]
    return name, seed, dt, tail


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("sweep", choices=["reach_ppo", "crawler_ppo", "crawler_sac",
                                          "reach_sac"])
    parser.add_argument("--steps", type=int, default=150_000)
    parser.add_argument("--seeds", type=int, default=1)
    parser.add_argument("--jobs", type=int, default=2)
    args = parser.parse_args()

    if args.sweep == "reach_ppo":
        env_kind, algo = "reach_arm", "ppo"
        variants = {
            "paper": {},
            "g95": {"gamma": 0.95},
            "g99": {"gamma": 0.99, "gae_lambda": 0.95},
            "mb64e10": {"minibatch_size": 64, "epochs": 10},
            "mb64e10_g95": {"minibatch_size": 64, "epochs": 10, "gamma": 0.95},
            "lr1e3_mb64e10_g95": {"minibatch_size": 64, "epochs": 10, "gamma": 0.95,
                                  "lr": 0.001},
            "paper_lr1e3": {"lr": 0.001},
            "c2_05": {"c2": 0.005},
        }
    elif args.sweep == "crawler_ppo":
        env_kind, algo = "quad_crawler", "ppo"
        variants = {
            "paper": {},
            "lr3e4": {"lr": 0.0003},
            "lr1e3": {"lr": 0.001},
            "lr3e4_c2_01": {"lr": 0.0003, "c2": 0.01},
            "lr1e3_c2_01": {"lr": 0.001, "c2": 0.01},
            "lr1e3_g99": {"lr": 0.001, "gamma": 0.99, "gae_lambda": 0.95},
            "lr1e3_e10": {"lr": 0.001, "epochs": 10},
            "lr1e3_mb256": {"lr": 0.001, "minibatch_size": 256, "epochs": 10},
        }
    elif args.sweep == "crawler_sac":
        env_kind, algo = "quad_crawler", "sac"
        variants = {
            "b64": {"batch_size": 64},
            "b64_lr5e4": {"batch_size": 64, "lr": 0.0005},
            "b16": {"batch_size": 16},
            "b16_lr5e4": {"batch_size": 16, "lr": 0.0005},
            "b64_tau5e3": {"batch_size": 64, "tau": 0.005},
            "b64_g99": {"batch_size": 64, "gamma": 0.99},
        }
    else:
        env_kind, algo = "reach_arm", "sac"
        variants = {"paper": {}}

    work = [(name, env_kind, algo, overrides, args.steps, max(args.steps // 10, 1), seed)
            for name, overrides in variants.items() for seed in range(args.seeds)]
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        for name, seed, dt, tail in pool.map(run_one, work):
            print(f"{name:22s} seed={seed} {dt:6.0f}s {tail}", flush=True)


if __name__ == "__main__":
    main()
