"""Behavioral correctness scoring and execution-pattern checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from statistics import fmean

from .errors import InvalidCorrectness, SpecMismatch
from .executor import ExecutionTrace, Interval

__all__ = [
    "Complexity",
    "TaskResult",
    "complexity",
    "raw_score",
    "normalized_score",
    "mean_normalized",
    "load_results",
    "Pattern",
    "ExpectedCall",
    "PatternSpec",
    "PatternReport",
    "check_pattern",
    "CORRECTNESS_LEVELS",
]

CORRECTNESS_LEVELS = (0.0, 0.5, 1.0)


class Complexity(str, Enum):
    BASIC = "Basic"
    MEDIUM = "Medium"
    COMPLEX = "Complex"


S_MAX = {Complexity.BASIC: 2, Complexity.MEDIUM: 5, Complexity.COMPLEX: 10}


@dataclass(frozen=True)
class TaskResult:
    action_count: int
    correctness: float
    task: str = ""

    def __post_init__(self):
        if isinstance(self.action_count, bool) or not isinstance(self.action_count, int) or self.action_count < 1:
            raise ValueError(f"action_count must be an integer >= 1, got {self.action_count!r}")
        if isinstance(self.correctness, bool) or self.correctness not in CORRECTNESS_LEVELS:
            raise InvalidCorrectness(f"correctness must be one of 0, 0.5, 1; got {self.correctness!r}")


def complexity(action_count: int) -> Complexity:
    if action_count <= 2:
        return Complexity.BASIC
    if action_count <= 5:
        return Complexity.MEDIUM
    return Complexity.COMPLEX


def raw_score(result: TaskResult) -> float:
    return S_MAX[complexity(result.action_count)] * float(result.correctness)


def normalized_score(result: TaskResult) -> float:
    # lower bound is 0 for every class
    return raw_score(result) / S_MAX[complexity(result.action_count)]


def mean_normalized(results) -> float:
    results = list(results)
    if not results:
        raise ValueError("no results to average")
    return fmean(normalized_score(r) for r in results)


def load_results(path: str | Path) -> list[TaskResult]:
    """Read a results file: a JSON list of ``{task, actions, correctness}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError("results file must hold a JSON list")
    out = []
    for i, row in enumerate(data):
        try:
            out.append(TaskResult(row["actions"], row["correctness"], str(row.get("task", f"task{i}"))))
        except (KeyError, TypeError, AttributeError) as e:
            raise ValueError(f"result #{i}: missing or bad field ({e})") from None
    return out


# -- pattern checks -------------------------------------------------------------


class Pattern(str, Enum):
    SEQUENTIAL = "sequential"
    PARALLEL = "parallel"
    CONDITION = "condition"
    EVENT = "event"


@dataclass(frozen=True)
class ExpectedCall:
    channel: str
    function: str
    start: float | None = None
    end: float | None = None

    def __post_init__(self):
        if self.start is not None and self.end is not None and self.end < self.start:
            raise ValueError(f"{self.function} on {self.channel}: end {self.end} < start {self.start}")

    @classmethod
    def from_dict(cls, d: dict) -> ExpectedCall:
        return cls(d["channel"], d["function"], d.get("start"), d.get("end"))


@dataclass(frozen=True)
class PatternSpec:
    pattern: Pattern
    intervals: tuple[ExpectedCall, ...] = ()
    channels: tuple[str, ...] = ()
    parent: ExpectedCall | None = None
    children: tuple[ExpectedCall, ...] = ()
    overlaps: tuple[tuple[int, int], ...] | None = None
    interrupt_ms: float | None = None
    calls: tuple[ExpectedCall, ...] = ()
    tolerance_ms: float | None = None
    majority: float = 0.5

    def __post_init__(self):
        if self.pattern is Pattern.CONDITION and self.parent is None:
            raise ValueError("condition pattern needs a parent")
        if self.pattern is Pattern.EVENT and self.interrupt_ms is None:
            raise ValueError("event pattern needs interrupt_ms")
        if not 0 <= self.majority < 1:
            raise ValueError("majority must be in [0, 1)")

    def declared_channels(self) -> set[str]:
        if self.channels:
            return set(self.channels)
        calls = [*self.intervals, *self.children, *self.calls]
        if self.parent:
            calls.append(self.parent)
        return {c.channel for c in calls}

    @classmethod
    def from_dict(cls, d: dict) -> PatternSpec:
        try:
            return cls._from_dict(d)
        except (KeyError, TypeError, AttributeError) as e:
            raise ValueError(f"malformed pattern spec: {type(e).__name__}: {e}") from None

    @classmethod
    def _from_dict(cls, d: dict) -> PatternSpec:
        calls = lambda key: tuple(ExpectedCall.from_dict(x) for x in d.get(key, []))  # noqa: E731
        overlaps = d.get("overlaps")
        return cls(
            pattern=Pattern(d["pattern"].lower()),
            intervals=calls("intervals"),
            channels=tuple(d.get("channels", ())),
            parent=ExpectedCall.from_dict(d["parent"]) if d.get("parent") else None,
            children=calls("children"),
            overlaps=tuple(tuple(p) for p in overlaps) if overlaps is not None else None,
            interrupt_ms=d.get("interrupt_ms"),
            calls=calls("calls"),
            tolerance_ms=d.get("tolerance_ms"),
            majority=d.get("majority", 0.5),
        )

    @classmethod
    def load(cls, path: str | Path) -> PatternSpec:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class PatternReport:
    correctness: float
    held: int
    total: int
    violations: list[str] = field(default_factory=list)


class _Matcher:
    """Assigns expected calls to trace intervals by (channel, function) occurrence."""

    def __init__(self, intervals: list[Interval]):
        self._by_key: dict[tuple, list[Interval]] = {}
        for iv in intervals:
            self._by_key.setdefault((iv.channel, iv.function), []).append(iv)
        self._used: dict[tuple, int] = {}

    def take(self, exp: ExpectedCall) -> Interval | None:
        key = (exp.channel, exp.function)
        k = self._used.get(key, 0)
        found = self._by_key.get(key, [])
        self._used[key] = k + 1
        return found[k] if k < len(found) else None


class _Relations:
    def __init__(self, tol: float):
        self.tol = tol
        self.held = 0
        self.total = 0
        self.violations: list[str] = []

    def check(self, ok: bool, message: str) -> bool:
        self.total += 1
        if ok:
            self.held += 1
        else:
            self.violations.append(message)
        return ok

    def close(self, a, b) -> bool:
        return abs(a - b) <= self.tol

    def timing(self, exp: ExpectedCall, iv: Interval | None) -> Interval | None:
        label = f"{exp.function}@{exp.channel}"
        if not self.check(iv is not None, f"{label}: no such call in trace"):
            return None
        if exp.start is not None:
            self.check(self.close(iv.start, exp.start), f"{label}: start {iv.start} != {exp.start}")
        if exp.end is not None:
            self.check(self.close(iv.end, exp.end), f"{label}: end {iv.end} != {exp.end}")
        return iv


def _default_tolerance(trace: ExecutionTrace) -> float:
    # real-time traces carry fractional wall-clock stamps
    realtime = any(isinstance(ev.t_ms, float) and not ev.t_ms.is_integer() for ev in trace.events)
    return 50.0 if realtime else 0.0


def check_pattern(trace: ExecutionTrace, spec: PatternSpec, tolerance_ms: float | None = None) -> PatternReport:
    """Score ``trace`` against an expected behavioral pattern.

    Every expected relation is a yes/no check. All holding gives 1.0; more
    than ``spec.majority`` of them gives 0.5; anything less gives 0.0.
    """
    declared = spec.declared_channels()
    used = {ev.channel for ev in trace.events if ev.channel is not None}
    extra = used - declared
    if extra:
        raise SpecMismatch(f"trace uses channels {sorted(extra)} absent from the pattern spec")
    tol = tolerance_ms if tolerance_ms is not None else spec.tolerance_ms
    if tol is None:
        tol = _default_tolerance(trace)
    r = _Relations(tol)
    intervals = trace.intervals()
    match = _Matcher(intervals)

    if spec.pattern is Pattern.SEQUENTIAL:
        if spec.intervals:
            seq = [r.timing(e, match.take(e)) for e in spec.intervals]
            seq = [iv for iv in seq if iv is not None]
        else:
            seq = [iv for iv in intervals if iv.channel in declared]
        for a, b in zip(seq, seq[1:]):
            r.check(a.end <= b.start + tol, f"{a.function} [{a.start},{a.end}] overlaps {b.function} [{b.start},{b.end}]")
        for i, a in enumerate(seq):
            for b in seq[i + 2 :]:
                r.check(a.end <= b.start + tol, f"{a.function} [{a.start},{a.end}] overlaps {b.function} [{b.start},{b.end}]")

    elif spec.pattern is Pattern.PARALLEL:
        got = [r.timing(e, match.take(e)) for e in spec.intervals]
        n = len(got)
        pairs = spec.overlaps if spec.overlaps is not None else [(i, j) for i in range(n) for j in range(i + 1, n)]
        for i, j in pairs:
            a, b = got[i], got[j]
            if a is None or b is None:
                r.check(False, f"overlap {i}-{j}: call missing")
                continue
            r.check(
                max(a.start, b.start) < min(a.end, b.end),
                f"{a.function} and {b.function} do not overlap",
            )

    elif spec.pattern is Pattern.CONDITION:
        parent = r.timing(spec.parent, match.take(spec.parent))
        kids = [r.timing(e, match.take(e)) for e in spec.children]
        kids = [k for k in kids if k is not None]
        if parent is not None and kids:
            last = max(k.end for k in kids)
            r.check(r.close(parent.end, last), f"parent ends at {parent.end}, last child at {last}")
            r.check(parent.outcome == "Reset", f"parent ended with {parent.outcome}, not Reset")

    else:
        t = spec.interrupt_ms
        for e in spec.calls:
            iv = r.timing(e, match.take(e))
            if iv is not None:
                r.check(iv.outcome == "Interrupted", f"{e.function}@{e.channel} ended with {iv.outcome}")
                r.check(r.close(iv.end, t), f"{e.function}@{e.channel} ended at {iv.end}, interrupt at {t}")
        for iv in intervals:
            if iv.start < t:
                r.check(iv.end <= t + tol, f"{iv.function}@{iv.channel} still running after interrupt ({iv.end})")

    if r.total and r.held == r.total:
        c = 1.0
    elif r.total and r.held / r.total > spec.majority:
        c = 0.5
    else:
        c = 0.0
    return PatternReport(c, r.held, r.total, r.violations)
