"""Probe a thermal bath twice and sweep the interaction time.

A qubit relaxing toward a bath's Gibbs state picks up temperature
information at a rate set by the interaction time: too short and nothing
thermalizes, too long and every probe arrives at the same stationary state.
This demo solves the optimal two-probe sequential strategy (relative squared
error, uniform temperature prior) across a time sweep and also runs the
one-probe-at-a-time adaptive greedy simulation, which for this channel
tracks the sequential optimum closely.

Uses the experiment-runner machinery, so the run directory it prints holds
the full manifest, per-point reports, the aggregated CSV, and a PNG.
"""

import json
import sys
from pathlib import Path

from probeopt.cli import main as cli_main

CONFIG = """
schema = 1

[experiment]
name = "thermometry-demo"
k = 2
classes = ["sequential"]

[channel]
kind = "thermometry"

[prior]
kind = "uniform"
lo = 1.0
hi = 20.0
n_points = 800

[cost]
kind = "relative_mse"

[seesaw]
n_restarts = 2
max_iters = 30
n_outcomes = 12
seed = 11

[greedy]
n_traj = 300
rounds = 2
batch = 1
class = "sequential"
n_outcomes = 12
seed = 11

[sweep]
parameter = "channel.t"
values = [0.25, 0.5, 1.0, 2.0, 4.0]
engines = ["optimize", "greedy"]
"""


def main() -> int:
    out = Path("runs")
    cfg_path = out / "thermometry_demo.toml"
    out.mkdir(exist_ok=True)
    cfg_path.write_text(CONFIG)

    rc = cli_main(["sweep", "--config", str(cfg_path), "--out", str(out), "--workers", "2"])
    if rc != 0:
        return rc
    run_dir = (out / "latest").resolve()
    csv_path = run_dir / "sweep_t.csv"
    cli_main(["plot", str(csv_path)])

    print("\ninteraction time vs relative-error score (lower is better):")
    for i in range(5):
        rep = json.loads((run_dir / f"point_{i}" / "report_optimize.json").read_text())
        grd = json.loads((run_dir / f"point_{i}" / "report_greedy.json").read_text())
        t = json.loads((run_dir / f"point_{i}" / "config.json").read_text())["channel"]["t"]
        print(
            f"  t={t:<5} sequential {rep['results']['sequential']['score']:.5f}   "
            f"greedy {grd['final_mean']:.5f} +- {grd['final_stderr']:.5f}"
        )
    print(f"\nplot: {csv_path.with_suffix('.png')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
