"""Inverse elastic rod: the fixed-point path runs away near kappa = 1; the
two-layer tracker recovers through growth switches and the T_h ladder.
Takes about 100 s."""

from _common import events, parse, report, save

from tfc_homotopy import (ConvexHomotopy, TfcHomotopy, TrackerConfig, dcm_track, pam_track,
                          two_layer_track)
from tfc_homotopy.problems import example3


def main():
    args = parse(__doc__)
    p = example3()
    cfg = TrackerConfig(**p.config_overrides, seed=args.seed)
    conv = ConvexHomotopy(p.objective, p.auxiliary)
    x0 = p.auxiliary.base_point
    runs = {
        "dcm": dcm_track(conv, x0, cfg),
        "pam": pam_track(conv, x0, config=cfg),
        "tfc": two_layer_track(TfcHomotopy(p.objective, p.auxiliary, basis=p.basis), cfg),
    }
    for name, tr in runs.items():
        report(name, tr)
        save(args.out, f"example3_{name}", tr)
    events(runs["tfc"])


if __name__ == "__main__":
    main()
