"""Indirect shooting for the nonlinear optimal-control example.  The kappa
embedding in the dynamics is the baseline path; the TFC term steers around
its limit point."""

from _common import events, parse, report, save

from tfc_homotopy import (TfcHomotopy, TrackerConfig, dcm_track, pam_track,
                          two_layer_track)
from tfc_homotopy.homotopy import CallableHomotopy
from tfc_homotopy.problems import example2


def main():
    args = parse(__doc__)
    p = example2()
    print("kappa = 0 costate:", p.extras["linear_costate"])
    cfg = TrackerConfig(**p.config_overrides, seed=args.seed)
    emb = CallableHomotopy(p.embedding, 2)
    x0 = p.auxiliary.base_point
    runs = {
        "dcm": dcm_track(emb, x0, cfg),
        "pam": pam_track(emb, x0, config=cfg),
        "tfc": two_layer_track(TfcHomotopy(p.objective, p.auxiliary, basis=p.basis,
                                           baseline=emb), cfg),
    }
    for name, tr in runs.items():
        report(name, tr)
        save(args.out, f"example2_{name}", tr)
    events(runs["tfc"])


if __name__ == "__main__":
    main()
