#!/usr/bin/env python3
"""What unmetered merging does to the corridor, and what ALINEA buys back.

Runs the benchmark network twice on the same demand realization: once with
every meter pinned green, once under local ALINEA feedback. Prints per-sensor
occupancy and flow so the congestion pattern (and its cure) is visible cell
by cell.
"""

import numpy as np

from rampnet.harness import make_controller
from rampnet.network import benchmark_config_path, load_config
from rampnet.plant import run_episode

SEED = 21


def summarize(label, record):
    print(f"\n{label}: dropped {record.dropped_veh:.0f} veh at full queues")
    print(f"{'sensor':>10} {'mean occ %':>11} {'peak occ %':>11} "
          f"{'mean flow veh/h':>16}")
    for j, sensor in enumerate(record.sensor_ids):
        print(f"{sensor:>10} {record.occupancy[:, j].mean():11.2f} "
              f"{record.occupancy[:, j].max():11.2f} "
              f"{record.flow[:, j].mean():16.1f}")
    print(f"{'average':>10} {record.occupancy.mean():11.2f} "
          f"{record.occupancy.max():11.2f} {record.flow.mean():16.1f}")


def main():
    config = load_config(benchmark_config_path())
    cells = sum(len(hw.cells) for hw in config.highways)
    print(f"benchmark corridor: {len(config.highways)} highways, "
          f"{cells} cells, {config.n_ramps} metered ramps, "
          f"{config.horizon_duration_s / 3600:.0f} h recorded after "
          f"{config.burn_in_s / 60:.0f} min burn-in")

    for name in ("no-control", "alinea"):
        controller = make_controller(name, config.n_ramps)
        record = run_episode(config, controller, seed=SEED)
        summarize(name, record)

    print("\nWith meters wide open the merge cells saturate and occupancy "
          "rides far above the 15% target; ALINEA holds the same corridor "
          "near the target and moves more vehicles while doing it.")


if __name__ == "__main__":
    main()
