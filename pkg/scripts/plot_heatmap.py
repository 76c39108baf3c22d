"""Heat map of test RMSE over the (eta, zeta) grid from a ``grid`` CSV.

Usage::

    python scripts/plot_heatmap.py grid.csv heatmap.png [--method trace]

Needs matplotlib (``pip install .[plot]``).  For ``compare-penalties`` output
pass ``--method`` to pick one method's rows.
"""
import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("csv")
    p.add_argument("out")
    p.add_argument("--method")
    args = p.parse_args(argv)
    with open(args.csv, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if not args.method or r.get("method") == args.method]
    if not rows:
        raise SystemExit("no rows to plot")
    etas = sorted({float(r["eta"]) for r in rows})
    zetas = sorted({float(r["zeta"]) for r in rows})
    grid = np.full((len(etas), len(zetas)), np.nan)
    for r in rows:
        grid[etas.index(float(r["eta"])), zetas.index(float(r["zeta"]))] = float(r["rmse_mean"])
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(grid, origin="lower", cmap="viridis")
    ax.set_xticks(range(len(zetas)), [f"{z:g}" for z in zetas])
    ax.set_yticks(range(len(etas)), [f"{e:g}" for e in etas])
    ax.set_xlabel("zeta (object kernel weight)")
    ax.set_ylabel("eta (user kernel weight)")
    for i in range(len(etas)):
        for j in range(len(zetas)):
            ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center", fontsize=7, color="w")
    fig.colorbar(im, label="test RMSE")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
