"""Plots for an `oeduu run-all` output directory.

    python docs/plot_results.py out/ [--save figures/]

Needs matplotlib. Reads designs/designs.csv, designs/design_weights.csv and
evaluation/summary.csv.
"""

import argparse
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def design_maps(out, variant):
    designs = [d for d in rows(out / "designs" / "designs.csv") if d["method"] == "oeduu" and d["variant"] == variant]
    weights = defaultdict(list)
    for w in rows(out / "designs" / "design_weights.csv"):
        weights[w["design_id"]].append(w)
    fig, axes = plt.subplots(1, len(designs), figsize=(3 * len(designs), 2.4), squeeze=False)
    for ax, d in zip(axes[0], designs):
        ws = weights[d["design_id"]]
        xs = [float(w["x"]) for w in ws]
        ys = [float(w["y"]) for w in ws]
        on = [float(w["weight"]) > 0.5 for w in ws]
        ax.scatter(xs, ys, s=8, c="lightgray")
        ax.scatter([x for x, o in zip(xs, on) if o], [y for y, o in zip(ys, on) if o], s=30, c="tab:red")
        ax.set_title(f"gamma {float(d['gamma']):g}, {d['nnz']} sensors", fontsize=9)
        ax.set_xlim(0, 1.5)
        ax.set_ylim(0, 1)
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle(f"OEDUU designs ({variant})")
    return fig


def spread(out, variant):
    summary = [s for s in rows(out / "evaluation" / "summary.csv") if s["variant"] == variant]
    levels = sorted((k for k in summary[0] if k.startswith("p")), key=lambda k: float(k[1:]))
    lo, hi = levels[0], levels[-1]
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, colour, offset in [("deterministic", "tab:blue", -0.15), ("oeduu", "tab:red", 0.15)]:
        sel = [s for s in summary if s["method"] == method]
        nnz = [int(s["nnz"]) + offset for s in sel]
        mean = [float(s["mean"]) for s in sel]
        err = [[m - float(s[lo]) for m, s in zip(mean, sel)], [float(s[hi]) - m for m, s in zip(mean, sel)]]
        ax.errorbar(nnz, mean, yerr=err, fmt="o", ms=3, alpha=0.6 if method == "deterministic" else 1.0, c=colour, label=method)
    ones = [s for s in summary if s["method"] == "all-ones"]
    if ones:
        ax.axhline(float(ones[0]["mean"]), c="gray", ls="--", lw=1, label="all sensors")
    ax.set_xlabel("number of sensors")
    ax.set_ylabel(f"tr(posterior) - tr(prior), mean and {lo}-{hi}")
    ax.set_title(f"held-out samples ({variant})")
    ax.legend()
    return fig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=Path)
    ap.add_argument("--save", type=Path)
    args = ap.parse_args()
    variants = sorted({d["variant"] for d in rows(args.out / "designs" / "designs.csv")})
    figs = {}
    for v in variants:
        figs[f"designs-{v}"] = design_maps(args.out, v)
        figs[f"spread-{v}"] = spread(args.out, v)
    if args.save:
        args.save.mkdir(parents=True, exist_ok=True)
        for name, fig in figs.items():
            fig.savefig(args.save / f"{name}.png", dpi=150, bbox_inches="tight")
    else:
        plt.show()


if __name__ == "__main__":
    main()
