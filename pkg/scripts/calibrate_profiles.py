#!/usr/bin/env python3
"""Re-derive per_byte_us for the mobile-network profiles.

Solves, per profile, for the serialization rate that puts the end-to-end
benchmark median (request up + result down, minus processing) on the
headline target, then reports where the single-sample reference-transfer
median lands. Run after touching base delays, dispersion, MTU, or the
response-size default, and paste the numbers into config.DEFAULT_CONFIG.
"""

import copy

from ptxlink.config import DEFAULT_CONFIG, Config
from ptxlink.experiment import PayloadModel, run_experiment
from ptxlink.linkmodel import sample_delay
from ptxlink.seeding import RngHub

N = 2500
SEEDS = (42, 7, 2024)


def e2e_median(raw: dict, network: str, seed: int) -> float:
    config = Config(raw)
    report = run_experiment(config, network, "orchestrated", n=N, seed=seed,
                            keep_trace=False)
    return report.box_stats["transmission_latency_ms"].median


def single_median(config: Config, network: str) -> float:
    profile = config.profile(network)
    rng = RngHub(123).rng("calibration")
    draws = sorted(
        sample_delay(profile, profile.transfer_ref_bytes, rng) for _ in range(10_000)
    )
    return draws[len(draws) // 2] / 1000.0


def main() -> None:
    raw = copy.deepcopy(DEFAULT_CONFIG)
    for network in ("5g_sa", "lte", "5g_nsa"):
        target = raw["profiles"][network]["transfer_target_ms"]
        c = raw["profiles"][network]["per_byte_us"]
        ref = raw["profiles"][network]["transfer_ref_bytes"]
        for _ in range(4):
            med = e2e_median(raw, network, SEEDS[0])
            err_ms = med - target
            if abs(err_ms) < 0.05:
                break
            c -= err_ms * 1000.0 / ref  # µs shift spread over the reference bytes
            raw["profiles"][network]["per_byte_us"] = round(c, 6)
        config = Config(raw)
        medians = [e2e_median(raw, network, s) for s in SEEDS]
        single = single_median(config, network)
        print(f"{network}: per_byte_us={raw['profiles'][network]['per_byte_us']}")
        print(f"  e2e medians over seeds {SEEDS}: {[round(m, 2) for m in medians]}"
              f"  (target {target}, band ±5% = [{target*0.95:.1f}, {target*1.05:.1f}])")
        print(f"  single-sample ref median: {single:.2f}"
              f"  ratio {single/target:.4f}")


if __name__ == "__main__":
    main()
