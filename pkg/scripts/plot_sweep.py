#!/usr/bin/env python3
"""Plot reward against the sweep axis from a `masktree sweep` CSV.

Usage: python3 scripts/plot_sweep.py results_sweep.csv [out.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main() -> int:
    if len(sys.argv) < 2:
        print(__doc__)
        return 2
    table = pd.read_csv(sys.argv[1])
    out = sys.argv[2] if len(sys.argv) > 2 else "sweep.png"
    axis = table["axis"].iloc[0]
    grouped = table.groupby("value")["final_reward"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(grouped.mean().index, grouped.mean(), yerr=grouped.sem(), marker="o")
    ax.set_xlabel(axis)
    ax.set_ylabel("final reward")
    ax.set_title(f"reward vs {axis} ({table['method'].iloc[0]})")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
