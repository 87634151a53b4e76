#!/usr/bin/env python3
"""Plot a trajectory log written by `mmloco simulate` or `mmloco trot`.

    python3 scripts/plot_log.py log.csv [out.png]

Needs matplotlib.
"""
import csv
import sys

import matplotlib.pyplot as plt


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    with open(sys.argv[1], newline="") as f:
        rows = list(csv.DictReader(f))
    t = [float(r["t"]) for r in rows]
    col = lambda k: [float(r[k]) for r in rows]

    fig, ax = plt.subplots(3, 1, sharex=True, figsize=(9, 8))
    for k in ("x", "y", "z"):
        ax[0].plot(t, col(k), label=k)
    ax[0].set_ylabel("position (m)")
    ax[0].legend()

    thrust = [k for k in rows[0] if k.startswith("thrust")]
    for k in thrust:
        ax[1].plot(t, col(k), label=k)
    ax[1].set_ylabel("thrust (N)")

    ax[2].plot(t, col("energy_legged"), label="legged")
    ax[2].plot(t, col("energy_aerial"), label="aerial")
    ax[2].set_ylabel("energy (J)")
    ax[2].set_xlabel("t (s)")
    ax[2].legend()

    # shade airborne phases
    airborne = {"Ascend", "Cruise", "Descend"}
    start = None
    for ti, r in zip(t, rows):
        up = r["phase"] in airborne
        if up and start is None:
            start = ti
        elif not up and start is not None:
            for a in ax:
                a.axvspan(start, ti, color="0.9")
            start = None

    fig.tight_layout()
    if len(sys.argv) > 2:
        fig.savefig(sys.argv[2], dpi=120)
    else:
        plt.show()


if __name__ == "__main__":
    main()
