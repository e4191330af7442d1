"""Shared domain types: problems, tracker configuration and path traces."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np


class ConfigurationError(ValueError):
    """Invalid problem, homotopy or tracker setup."""


@dataclass(frozen=True)
class ZeroProblem:
    """Residual map ``F: R^n -> R^n`` with an optional analytic Jacobian."""

    dim: int
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("dim must be positive")

    def __call__(self, x):
        return np.asarray(self.residual(np.asarray(x, dtype=float)), dtype=float)

    def jac(self, x):
        from .linalg import jacobian_fd

        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float)
        return jacobian_fd(self, x)


AUX_KINDS = ("newton", "fixed_point", "affine", "custom")


@dataclass(frozen=True)
class AuxiliaryProblem:
    """The starting problem ``G(x) = 0`` of a homotopy, solved by ``base_point``."""

    kind: str
    base_point: np.ndarray
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    matrix: Optional[np.ndarray] = None

    @property
    def dim(self):
        return len(self.base_point)

    def __call__(self, x):
        return np.asarray(self.residual(np.asarray(x, dtype=float)), dtype=float)

    def jac(self, x):
        from .linalg import jacobian_fd

        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float)
        return jacobian_fd(self, x)


def make_auxiliary(kind, problem, x0, A=None, residual=None, jacobian=None):
    """Build the auxiliary function ``G`` for a convex or TFC homotopy.

    ``newton``: ``G(x) = F(x) - F(x0)``; ``fixed_point``: ``G(x) = x - x0``;
    ``affine``: ``G(x) = A (x - x0)``.  ``custom`` takes a user ``residual``
    whose zero is ``x0``.
    """
    x0 = np.array(x0, dtype=float, ndmin=1)
    n = problem.dim
    if x0.shape != (n,):
        raise ConfigurationError(f"x0 must have length {n}")
    if kind == "fixed_point":
        eye = np.eye(n)
        return AuxiliaryProblem(kind, x0, lambda x: x - x0, lambda x: eye)
    if kind == "newton":
        f0 = problem(x0)
        return AuxiliaryProblem(kind, x0, lambda x: problem(x) - f0, problem.jac)
    if kind == "affine":
        if A is None:
            raise ConfigurationError("affine auxiliary needs a matrix A")
        A = np.array(A, dtype=float, ndmin=2)
        if A.shape != (n, n):
            raise ConfigurationError(f"A must be {n}x{n}")
        if abs(np.linalg.det(A)) < 1e-14 or np.linalg.cond(A) > 1e14:
            raise ConfigurationError("affine auxiliary matrix is singular")
        A = A.copy()
        return AuxiliaryProblem(kind, x0, lambda x: A @ (x - x0), lambda x: A, A)
    if kind == "custom":
        if residual is None:
            raise ConfigurationError("custom auxiliary needs a residual map")
        return AuxiliaryProblem(kind, x0, residual, jacobian)
    raise ConfigurationError(f"unknown auxiliary kind {kind!r}")


@dataclass
class TrackerConfig:
    """Step, tolerance and layer-2 parameters shared by every tracker."""

    dkappa_default: float = 0.01
    tol_f: float = 1e-12
    tol_x: float = 1e-12
    max_corrector_iters: int = 30
    max_consecutive_fails: int = 3
    growth_threshold: float = 1e3
    sing_det_threshold: float = 1e-4
    discount: float = 0.5
    horizon: int = 15
    n_predicted: int = 2
    max_switches: int = 10
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 < self.dkappa_default <= 1.0:
            raise ConfigurationError("dkappa_default must lie in (0, 1]")
        if self.tol_f <= 0 or self.tol_x <= 0:
            raise ConfigurationError("tolerances must be positive")
        if not 0.0 <= self.discount < 1.0:
            raise ConfigurationError("discount must lie in [0, 1)")
        if self.horizon < 1 or self.n_predicted < 1:
            raise ConfigurationError("horizon and n_predicted must be >= 1")
        if self.max_consecutive_fails < 1:
            raise ConfigurationError("max_consecutive_fails must be >= 1")
        if self.growth_threshold <= 0 or self.sing_det_threshold <= 0:
            raise ConfigurationError("thresholds must be positive")

    def replace(self, **changes):
        d = asdict(self)
        unknown = set(changes) - set(d)
        if unknown:
            raise ConfigurationError(f"unknown tracker parameters: {sorted(unknown)}")
        d.update(changes)
        return TrackerConfig(**d)


EVENT_KINDS = (
    "step_accepted",
    "step_halved",
    "limit_point_detected",
    "threshold_crossed",
    "switch_solved",
    "switch_failed",
    "ladder_retry",
    "converged",
    "aborted",
)

OUTCOMES = (
    "success",
    "limit_point_stall",
    "diverged",
    "returned_to_start",
    "max_switches_exceeded",
    "corrector_failure",
    "aborted",
)


@dataclass
class PathEvent:
    kind: str
    kappa: float
    point: np.ndarray
    payload: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        self.point = np.array(self.point, dtype=float, ndmin=1)


def _fmt(v):
    # 17 significant digits survive a text round trip
    return float(f"{float(v):.17g}")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, float)):
        return _fmt(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class PathTrace:
    """Accepted ``(kappa, x)`` points plus tagged events of one tracking run.

    ``segments[i]`` is the index of the homotopy path (the switch count
    ``j``) that point ``i`` belongs to; plain DCM/PAM runs use 0 throughout.
    """

    points: list = field(default_factory=list)
    events: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    outcome: Optional[str] = None
    omegas: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def add_point(self, kappa, x, segment=0, event=True, payload=None):
        x = np.array(x, dtype=float, ndmin=1)
        self.points.append((float(kappa), x))
        self.segments.append(int(segment))
        if event:
            self.add_event("step_accepted", kappa, x, payload)

    def add_event(self, kind, kappa, x, payload=None):
        self.events.append(PathEvent(kind, float(kappa), x, payload))

    def count(self, kind):
        return sum(1 for e in self.events if e.kind == kind)

    def events_of(self, kind):
        return [e for e in self.events if e.kind == kind]

    @property
    def kappas(self):
        return np.array([p[0] for p in self.points])

    @property
    def xs(self):
        return np.array([p[1] for p in self.points])

    @property
    def final(self):
        return self.points[-1] if self.points else None

    # --- serialization ---

    def to_jsonl_lines(self):
        lines = [json.dumps({"type": "meta", "outcome": self.outcome,
                             "stats": _jsonable(self.stats),
                             "omegas": _jsonable(self.omegas)})]
        for (k, x), seg in zip(self.points, self.segments):
            lines.append(json.dumps({"type": "point", "kappa": _fmt(k),
                                     "x": _jsonable(x), "segment": seg}))
        for e in self.events:
            lines.append(json.dumps({"type": "event", "kappa": _fmt(e.kappa),
                                     "x": _jsonable(e.point), "event_kind": e.kind,
                                     "payload": _jsonable(e.payload)}))
        return lines

    def write_jsonl(self, path):
        _atomic_write(path, "\n".join(self.to_jsonl_lines()) + "\n")

    @classmethod
    def from_jsonl_lines(cls, lines):
        trace = cls()
        for line in lines:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["type"] == "meta":
                trace.outcome = rec["outcome"]
                trace.stats = rec.get("stats", {})
                trace.omegas = [np.array(o) for o in rec.get("omegas", [])]
            elif rec["type"] == "point":
                trace.points.append((rec["kappa"], np.array(rec["x"], dtype=float)))
                trace.segments.append(rec.get("segment", 0))
            elif rec["type"] == "event":
                trace.events.append(PathEvent(rec["event_kind"], rec["kappa"],
                                              rec["x"], rec.get("payload")))
        return trace

    @classmethod
    def read_jsonl(cls, path):
        return cls.from_jsonl_lines(Path(path).read_text().splitlines())

    def write_csv(self, path, events_path=None):
        """Points to ``path``; events to ``events_path`` (JSONL) if given."""
        n = len(self.points[0][1]) if self.points else 0
        rows = [["kappa"] + [f"x_{i + 1}" for i in range(n)] + ["segment"]]
        for (k, x), seg in zip(self.points, self.segments):
            rows.append([repr(_fmt(k))] + [repr(_fmt(v)) for v in x] + [str(seg)])
        text = "\n".join(",".join(r) for r in rows) + "\n"
        _atomic_write(path, text)
        if events_path is not None:
            lines = [ln for ln in self.to_jsonl_lines()
                     if json.loads(ln)["type"] == "event"]
            _atomic_write(events_path, "\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def read_csv(cls, path):
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            has_seg = header[-1] == "segment"
            for row in reader:
                vals = row[:-1] if has_seg else row
                trace.points.append((float(vals[0]), np.array([float(v) for v in vals[1:]])))
                trace.segments.append(int(row[-1]) if has_seg else 0)
        return trace


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
