"""Shared helpers for the experiment scripts."""

import argparse
from pathlib import Path

import numpy as np

QUIET = ("step_accepted", "step_halved")


def parse(description):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--out", default=None, help="directory for trace files")
    ap.add_argument("--seed", type=int, default=0)
    return ap.parse_args()


def report(label, trace):
    k, x = trace.final
    t = trace.stats.get("wall_time", float("nan"))
    print(f"{label:10s} {trace.outcome:20s} kappa={k:.6f} x={np.array2string(x, precision=6)} "
          f"switches={trace.stats.get('switches', 0)} t={t:.2f}s")


def events(trace):
    for e in trace.events:
        if e.kind in QUIET:
            continue
        extra = {k: v for k, v in (e.payload or {}).items()
                 if k in ("reason", "status", "J", "det", "level", "bound")}
        print(f"    {e.kind:22s} kappa={e.kappa:.5f} x={np.array2string(e.point, precision=5)} {extra}")


def save(out, name, trace):
    if out is None:
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    trace.write_jsonl(d / f"{name}.jsonl")
    trace.write_csv(d / f"{name}.csv")
