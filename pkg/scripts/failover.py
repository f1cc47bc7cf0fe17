"""Kill the duty controller mid-step and measure the takeover, over many seeds."""

import argparse

import numpy as np

from depsolar.config import FaultSpec, ScenarioConfig
from depsolar.runner import run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kill-at", type=float, default=50.0, help="seconds")
    ap.add_argument("--timeout", type=float, default=1000.0, help="ms")
    ap.add_argument("--heartbeat", type=float, default=100.0, help="ms")
    ap.add_argument("--controllers", type=int, default=2)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()

    takeover, election, settle = [], [], []
    unsafe = 0
    for seed in range(args.seeds):
        cfg = ScenarioConfig(rng_seed=seed, faults=[FaultSpec(args.kill_at, "KILL", 1)])
        cfg.protocol.timeout_ms = args.timeout
        cfg.protocol.heartbeat_interval_ms = args.heartbeat
        cfg.protocol.n_controllers = args.controllers
        s = run_scenario(cfg).summary
        takeover.append(s["takeover_latency_ms"])
        election.append(s["election_latency_ms"])
        settle.append(s["settling_time_s"])
        unsafe += not s["safety_ok"]

    bound = args.timeout + args.heartbeat + 120.0
    tk = np.array(takeover, dtype=float)
    print(f"{args.seeds} runs, KILL node 1 at {args.kill_at:g} s")
    print(f"election latency  mean {np.mean(election):7.1f} ms  max {np.max(election):7.1f} ms")
    print(f"takeover latency  mean {tk.mean():7.1f} ms  max {tk.max():7.1f} ms  (bound {bound:g} ms)")
    print(f"settling time     max {max(settle):g} s")
    print(f"runs with >1 sender in an epoch: {unsafe}")


if __name__ == "__main__":
    main()
