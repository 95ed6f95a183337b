#!/usr/bin/env python3
"""Plot the artifacts of a tuning campaign directory (see run_campaign.py).

Produces: cost_per_iteration.png, tracking_baseline_vs_tuned.png,
effort_baseline_vs_tuned.png, gain_traces.png.
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",")
    return header, data


def load_rollout(path):
    header, data = read_csv(path)
    col = {name: i for i, name in enumerate(header)}
    joints = sorted(set(data[:, col["joint"]].astype(int)))
    out = {}
    for j in joints:
        rows = data[data[:, col["joint"]] == j]
        out[j] = {name: rows[:, i] for name, i in col.items()}
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("campaign_dir")
    args = ap.parse_args()
    d = Path(args.campaign_dir)

    traces = sorted(d.glob("bo_trace_joint*.csv"))
    fig, ax = plt.subplots(figsize=(7, 4))
    for path in traces:
        header, data = read_csv(path)
        label = path.stem.replace("bo_trace_", "")
        ax.plot(data[:, 0], data[:, header.index("cost")], "o", alpha=0.4)
        ax.plot(data[:, 0], data[:, header.index("best_so_far")], label=label)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("cost")
    ax.legend()
    ax.set_title("cost per optimization iteration (dots: samples, lines: best so far)")
    fig.tight_layout()
    fig.savefig(d / "cost_per_iteration.png", dpi=130)

    base = load_rollout(d / "rollout_baseline.csv")
    tuned = load_rollout(d / "rollout_tuned.csv")
    for quantity, fname, ylabel in (
            ("theta", "tracking_baseline_vs_tuned.png", "joint angle [rad]"),
            ("u", "effort_baseline_vs_tuned.png", "torque [Nm]")):
        fig, axes = plt.subplots(len(base), 2, figsize=(11, 2.6 * len(base)),
                                 sharex=True, squeeze=False)
        for row, j in enumerate(sorted(base)):
            for colidx, (src, name) in enumerate(((base, "bootstrap PID"),
                                                  (tuned, "adaptive PID"))):
                axq = axes[row][colidx]
                axq.plot(src[j]["t"], src[j][quantity], lw=0.7)
                if quantity == "theta":
                    axq.plot(src[j]["t"], src[j]["theta_ref"], "k--", lw=0.7)
                axq.set_title(f"joint {j}, {name}", fontsize=9)
                axq.set_ylabel(ylabel, fontsize=8)
        axes[-1][0].set_xlabel("t [s]")
        axes[-1][1].set_xlabel("t [s]")
        fig.tight_layout()
        fig.savefig(d / fname, dpi=130)

    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for j in sorted(tuned):
        axes[0].plot(tuned[j]["t"], tuned[j]["kp"], lw=0.8, label=f"joint {j}")
        axes[1].plot(tuned[j]["t"], tuned[j]["kd"], lw=0.8, label=f"joint {j}")
    axes[0].set_ylabel("proportional gain")
    axes[1].set_ylabel("derivative gain")
    axes[1].set_xlabel("t [s]")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(d / "gain_traces.png", dpi=130)
    print(f"plots written to {d}/")


if __name__ == "__main__":
    main()
