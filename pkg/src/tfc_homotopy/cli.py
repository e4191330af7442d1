"""Command-line runner.

``tfc-homotopy run`` tracks one problem with one tracker and writes the
trace with its events plus a summary.  ``tfc-homotopy compare`` runs several
configurations on the same problem and tabulates their outcomes.

Exit codes: 0 success, 2 stall (limit point, return to start, corrector
failure), 3 diverged, 4 switch cap reached or aborted, 5 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ConfigurationError, TrackerConfig, _atomic_write, _jsonable, make_auxiliary
from .homotopy import CallableHomotopy, ConvexHomotopy, SupportCase, TfcHomotopy
from .problems import PROBLEMS, get_problem
from .tracking import dcm_track, pam_track, two_layer_track

log = logging.getLogger("tfc_homotopy")

TRACKERS = ("dcm", "pam", "tfc")
HOMOTOPIES = ("convex_fixed_point", "convex_newton", "convex_affine",
              "tfc_poly", "tfc_exp_pos", "tfc_exp_neg", "embedded")
FORMATS = ("jsonl", "csv")

EXIT_CODES = {
    "success": 0,
    "limit_point_stall": 2,
    "returned_to_start": 2,
    "corrector_failure": 2,
    "diverged": 3,
    "max_switches_exceeded": 4,
    "aborted": 4,
}
EXIT_CONFIG = 5

# flag name -> TrackerConfig field
_PARAM_FLAGS = {"dkappa": "dkappa_default", "th": "growth_threshold",
                "delta": "sing_det_threshold", "gamma": "discount",
                "zeta": "horizon", "npred": "n_predicted"}


@dataclass
class RunConfig:
    problem: str
    tracker: str = "tfc"
    homotopy: Optional[str] = None  # None: the problem's own auxiliary (tfc_poly for tfc)
    tracker_params: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"
    formats: tuple = ("jsonl", "csv")

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.tracker not in TRACKERS:
            raise ConfigurationError(f"unknown tracker {self.tracker!r}")
        if self.homotopy is not None and self.homotopy not in HOMOTOPIES:
            raise ConfigurationError(f"unknown homotopy {self.homotopy!r}")
        if self.tracker == "tfc" and self.homotopy is not None and not self.homotopy.startswith("tfc_"):
            raise ConfigurationError("tracker tfc requires a tfc_* homotopy")
        if self.tracker != "tfc" and self.homotopy is not None and self.homotopy.startswith("tfc_"):
            raise ConfigurationError(f"tracker {self.tracker} needs a convex or embedded homotopy")
        bad = set(self.formats) - set(FORMATS)
        if bad or not self.formats:
            raise ConfigurationError(f"formats must be a non-empty subset of {FORMATS}")
        unknown = set(self.tracker_params) - set(asdict(TrackerConfig()))
        if unknown:
            raise ConfigurationError(f"unknown tracker parameters {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "formats" in d:
            f = d["formats"]
            d["formats"] = tuple(f.split(",")) if isinstance(f, str) else tuple(f)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown run-config keys {sorted(unknown)}")
        return cls(**d)


def tracker_config(problem, rc):
    params = dict(problem.config_overrides)
    params.update(rc.tracker_params)
    params["seed"] = rc.seed
    return TrackerConfig(**params)


def build_homotopy(problem, kind, tracker):
    """Evaluator for ``kind`` on ``problem``."""
    x0 = problem.auxiliary.base_point
    if kind is None:
        if tracker == "tfc":
            kind = "tfc_poly"
        elif problem.embedding is not None:
            kind = "embedded"
        else:
            return ConvexHomotopy(problem.objective, problem.auxiliary)
    if kind == "embedded":
        if problem.embedding is None:
            raise ConfigurationError(f"problem {problem.name} has no parameter embedding")
        return CallableHomotopy(problem.embedding, problem.objective.dim)
    if kind.startswith("convex_"):
        aux_kind = kind[len("convex_"):]
        A = None
        if aux_kind == "affine":
            A = problem.auxiliary.matrix
            if A is None:
                A = problem.objective.jac(x0)
        return ConvexHomotopy(problem.objective,
                              make_auxiliary(aux_kind, problem.objective, x0, A=A))
    support = SupportCase(kind[len("tfc_"):])
    baseline = None
    if problem.embedding is not None:
        baseline = CallableHomotopy(problem.embedding, problem.objective.dim)
    return TfcHomotopy(problem.objective, problem.auxiliary, support, basis=problem.basis,
                       baseline=baseline)


def execute(rc):
    """Run one configuration; returns ``(trace, summary, problem)``."""
    rc.validate()
    problem = get_problem(rc.problem)
    cfg = tracker_config(problem, rc)
    h = build_homotopy(problem, rc.homotopy, rc.tracker)
    x0 = problem.auxiliary.base_point
    log.info("running %s / %s / %s", rc.problem, rc.tracker, rc.homotopy)
    if rc.tracker == "dcm":
        trace = dcm_track(h, x0, cfg)
    elif rc.tracker == "pam":
        trace = pam_track(h, x0, config=cfg)
    else:
        trace = two_layer_track(h, cfg)
    return trace, summarize(trace, problem, rc), problem


def summarize(trace, problem, rc):
    kappa, x = trace.final
    try:
        res = float(np.max(np.abs(problem.objective(x))))
    except ArithmeticError:
        res = float("nan")
    return {
        "problem": rc.problem,
        "tracker": rc.tracker,
        "homotopy": rc.homotopy,
        "outcome": trace.outcome,
        "final_kappa": kappa,
        "final_x": x,
        "residual_norm": res,
        "switches": trace.stats.get("switches", 0),
        "accepted": trace.stats.get("accepted", len(trace.points)),
        "halvings": trace.stats.get("halvings", 0),
        "omega_history": trace.omegas,
        "seed": rc.seed,
        "wall_time": trace.stats.get("wall_time", 0.0),
    }


def write_outputs(trace, summary, rc):
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "jsonl" in rc.formats:
        trace.write_jsonl(out / "trace.jsonl")
    if "csv" in rc.formats:
        trace.write_csv(out / "trace.csv", out / "events.jsonl")
    else:
        lines = [ln for ln in trace.to_jsonl_lines() if json.loads(ln)["type"] == "event"]
        _atomic_write(out / "events.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    _atomic_write(out / "summary.json", json.dumps(_jsonable(summary), indent=2) + "\n")


def run(rc):
    try:
        trace, summary, _ = execute(rc)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_outputs(trace, summary, rc)
    print(f"{rc.problem} {rc.tracker}: {summary['outcome']} at kappa={summary['final_kappa']:.6g} "
          f"x={np.array2string(np.asarray(summary['final_x']), precision=8)}")
    return EXIT_CODES.get(trace.outcome, 4)


COMPARE_COLUMNS = ("tracker", "homotopy", "outcome", "final_kappa", "residual",
                   "switches", "accepted", "halvings", "wall_time")


def compare(configs, output_dir):
    if len(configs) < 2:
        print("configuration error: compare needs at least two configurations", file=sys.stderr)
        return EXIT_CONFIG
    if len({c.problem for c in configs}) != 1:
        print("configuration error: compare needs a single problem", file=sys.stderr)
        return EXIT_CONFIG
    rows = []
    for rc in configs:
        try:
            trace, s, _ = execute(rc)
        except ConfigurationError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        rows.append([rc.tracker, rc.homotopy or "default", s["outcome"],
                     repr(float(s["final_kappa"])), repr(s["residual_norm"]),
                     s["switches"], s["accepted"], s["halvings"], f"{s['wall_time']:.3f}"])
        print(f"{rc.tracker:4s} {s['outcome']:22s} kappa={s['final_kappa']:.6g}")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    w.writerows(rows)
    _atomic_write(out / "compare.csv", buf.getvalue())
    return 0


def _add_run_flags(p):
    p.add_argument("--problem")
    p.add_argument("--tracker", choices=TRACKERS)
    p.add_argument("--homotopy", choices=HOMOTOPIES)
    p.add_argument("--dkappa", type=float)
    p.add_argument("--th", type=float, help="growth threshold T_h")
    p.add_argument("--delta", type=float, help="determinant threshold")
    p.add_argument("--gamma", type=float, help="far-side discount")
    p.add_argument("--zeta", type=int, help="far-side horizon")
    p.add_argument("--npred", type=int, help="number of far-side points")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--format", help="comma-separated subset of jsonl,csv")
    p.add_argument("--config", help="JSON run configuration; flags override it")


def _run_config(args, base=None):
    d = dict(base or {})
    if args.config:
        try:
            d.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
    params = dict(d.get("tracker_params", {}))
    for flag, name in _PARAM_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            params[name] = v
    d["tracker_params"] = params
    for flag, key in (("problem", "problem"), ("tracker", "tracker"), ("homotopy", "homotopy"),
                      ("seed", "seed"), ("out", "output_dir"), ("format", "formats")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    if "problem" not in d:
        raise ConfigurationError("--problem is required")
    return RunConfig.from_dict(d)


def _setup_logging():
    level = os.environ.get("HOMOTOPY_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "error"
    logging.basicConfig(stream=sys.stderr, level=levels[level],
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    parser = argparse.ArgumentParser(prog="tfc-homotopy", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="track one problem")
    _add_run_flags(p_run)
    p_cmp = sub.add_parser("compare", help="run several configurations on one problem")
    _add_run_flags(p_cmp)
    p_cmp.add_argument("--trackers", nargs="+", choices=TRACKERS,
                       help="one run per tracker with its default homotopy")
    p_cmp.add_argument("configs", nargs="*", help="JSON run configurations")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    try:
        if args.command == "run":
            return run(_run_config(args))
        configs = []
        for path in args.configs:
            try:
                d = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigurationError(f"cannot read config {path}: {exc}") from None
            configs.append(RunConfig.from_dict(d))
        for tr in args.trackers or ():
            ns = argparse.Namespace(**vars(args))
            ns.tracker, ns.homotopy = tr, None
            configs.append(_run_config(ns))
        return compare(configs, args.out or "out")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
