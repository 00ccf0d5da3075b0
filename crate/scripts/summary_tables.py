#!/usr/bin/env python3
"""Turn one or more orchsim summary.csv files into markdown tables.

Usage: summary_tables.py [LABEL=]PATH [[LABEL=]PATH ...]

Each argument is one run (an ablation arm). Three tables are printed:
per-phase imbalance ratios, summed per-phase max cost, and per-iteration
inter-node volume with and without node-wise permutation.
"""

import argparse
import csv
import sys
from collections import OrderedDict, defaultdict


def load(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def parse_run(arg):
    label, sep, path = arg.partition("=")
    if not sep:
        label, path = arg, arg
    return label, load(path)


def table(header, rows):
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(out)


def phases_of(runs):
    seen = OrderedDict()
    for _, rows in runs:
        for r in rows:
            seen[r["phase"]] = None
    return list(seen)


def imbalance(runs):
    phases = phases_of(runs)
    header = ["run"] + [f"{p} pre -> post" for p in phases]
    body = []
    for label, rows in runs:
        acc = defaultdict(lambda: [0.0, 0.0, 0])
        for r in rows:
            a = acc[r["phase"]]
            a[0] += float(r["pre_ratio"])
            a[1] += float(r["post_ratio"])
            a[2] += 1
        cells = []
        for p in phases:
            pre, post, n = acc[p]
            cells.append(f"{pre / n:.3f} -> {post / n:.3f}" if n else "-")
        body.append([label] + cells)
    return table(header, body)


def summed_cost(runs):
    phases = phases_of(runs)
    header = ["run"] + phases + ["total", "vs first"]
    body = []
    first = None
    for label, rows in runs:
        acc = defaultdict(float)
        for r in rows:
            acc[r["phase"]] += float(r["post_max_cost"])
        total = sum(acc.values())
        first = total if first is None else first
        rel = f"{total / first:.3f}" if first else "-"
        body.append([label] + [f"{acc[p]:.1f}" for p in phases] + [f"{total:.1f}", rel])
    return table(header, body)


def nodewise(runs):
    header = ["run", "iteration", "baseline max egress", "node-wise max egress", "ratio"]
    body = []
    for label, rows in runs:
        acc = OrderedDict()
        for r in rows:
            b, n = acc.get(r["iteration"], (0, 0))
            acc[r["iteration"]] = (b + int(r["baseline_max_egress"]), n + int(r["nodewise_max_egress"]))
        for it, (b, n) in acc.items():
            body.append([label, it, b, n, f"{n / b:.3f}" if b else "-"])
    return table(header, body)


def main(argv):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", nargs="+", metavar="[LABEL=]PATH")
    args = ap.parse_args(argv)
    runs = [parse_run(a) for a in args.runs]
    print("## Imbalance ratio (max / mean phase cost), mean over iterations\n")
    print(imbalance(runs))
    print("\n## Summed post-balance max cost\n")
    print(summed_cost(runs))
    print("\n## Inter-node volume (max node egress, summed over phases)\n")
    print(nodewise(runs))


if __name__ == "__main__":
    main(sys.argv[1:])
