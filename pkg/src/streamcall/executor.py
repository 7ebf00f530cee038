"""Pipeline runtime: parser -> element builder -> mapper -> scheduler -> channels.

Two drivers share one core. The virtual driver is a discrete-event loop
where time jumps to the next delivery, completion, hold expiry or
interrupt; runs are fully deterministic. The real-time driver runs one
worker thread per channel around the same serialized core and maps
durations to wall-clock sleeps.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from .elements import Element, ElementBuilder, ElementEvent, ElementEventKind, ElementForm
from .errors import (
    FormUnsupported,
    MappingError,
    ParseError,
    ScenarioError,
    SchedulingError,
    StalledProgram,
    StreamCallError,
)
from .registry import BoundCall, ChannelKind, ChannelSpec, Form, Registry
from .scheduler import Scheduler, Step, StepKind
from .tokens import FunctionToken, StreamChunk, StreamParser

__all__ = [
    "EventKind",
    "ExecutionEvent",
    "ExecutionTrace",
    "CallRecord",
    "Interval",
    "InterruptSpec",
    "ScenarioConfig",
    "Program",
    "Subscription",
    "run_program",
    "open_program",
]

log = logging.getLogger(__name__)

DEFAULT_TEXT_RATE_MS = 50.0


class EventKind(str, Enum):
    ACTIVATED = "Activated"
    INVOKED = "Invoked"
    COMPLETED = "Completed"
    RESET = "Reset"
    FAILED = "Failed"
    INTERRUPTED = "Interrupted"
    TEXT_SPOKEN = "TextSpoken"
    WARNING = "Warning"


_START_KINDS = {EventKind.ACTIVATED, EventKind.INVOKED}
_END_KINDS = {
    EventKind.COMPLETED,
    EventKind.RESET,
    EventKind.FAILED,
    EventKind.INTERRUPTED,
    EventKind.TEXT_SPOKEN,
}


def _num(x):
    if isinstance(x, float) and x.is_integer():
        return int(x)
    return x


@dataclass(frozen=True)
class ExecutionEvent:
    seq: int
    t_ms: float
    kind: EventKind
    channel: str | None = None
    function: str | None = None
    args: dict = field(default_factory=dict)
    detail: str | None = None

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "t_ms": _num(self.t_ms),
            "kind": self.kind.value,
            "channel": self.channel,
            "function": self.function,
            "args": self.args,
            "detail": self.detail,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> ExecutionEvent:
        return cls(d["seq"], d["t_ms"], EventKind(d["kind"]), d["channel"], d["function"], d["args"] or {}, d["detail"])


@dataclass
class CallRecord:
    """Per-call bookkeeping kept alongside the event log."""

    index: int
    function: str
    channel: str
    form: str
    is_text: bool
    parent: int | None
    enqueued: float
    start: float | None = None
    end: float | None = None
    outcome: str | None = None


@dataclass(frozen=True)
class Interval:
    channel: str
    function: str
    start: float
    end: float
    outcome: str


@dataclass
class ExecutionTrace:
    events: list[ExecutionEvent] = field(default_factory=list)
    calls: list[CallRecord] = field(default_factory=list)
    error: str | None = None
    interrupted: bool = False

    def intervals(self, channel: str | None = None) -> list[Interval]:
        """Per-call [start, end] intervals derived from the event log.

        Each end event closes the most recent open start with the same
        channel and function, which handles both sequential and nested
        same-name calls.
        """
        open_: dict[tuple, list[ExecutionEvent]] = {}
        out: list[Interval] = []
        for ev in self.events:
            key = (ev.channel, ev.function)
            if ev.kind in _START_KINDS:
                open_.setdefault(key, []).append(ev)
            elif ev.kind in _END_KINDS and open_.get(key):
                st = open_[key].pop()
                out.append(Interval(ev.channel, ev.function, st.t_ms, ev.t_ms, ev.kind.value))
        out.sort(key=lambda iv: (iv.start, iv.end))
        if channel is not None:
            out = [iv for iv in out if iv.channel == channel]
        return out

    def counts(self) -> dict[str, int]:
        c: dict[str, int] = {}
        for ev in self.events:
            c[ev.kind.value] = c.get(ev.kind.value, 0) + 1
        return c

    def to_jsonl(self) -> str:
        return "".join(ev.to_json() + "\n" for ev in self.events)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> ExecutionTrace:
        events = []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if line.strip():
                try:
                    events.append(ExecutionEvent.from_dict(json.loads(line)))
                except (KeyError, TypeError, ValueError, AttributeError) as e:
                    raise ScenarioError(f"{path}:{n}: bad trace record ({e})") from None
        return cls(events)


@dataclass(frozen=True)
class InterruptSpec:
    reason: str = "external interrupt"


@dataclass
class ScenarioConfig:
    channels: list[ChannelSpec] = field(default_factory=list)
    durations: dict[str, float] = field(default_factory=dict)
    text_rate: float = DEFAULT_TEXT_RATE_MS
    clock_mode: str = "virtual"
    interrupts: list[tuple[float, InterruptSpec]] = field(default_factory=list)
    error_policy: str = "strict"

    def __post_init__(self):
        if self.text_rate <= 0:
            raise ScenarioError("text_rate must be positive")
        if any(d < 0 for d in self.durations.values()):
            raise ScenarioError("durations must be non-negative")
        if self.clock_mode not in ("virtual", "realtime"):
            raise ScenarioError(f"unknown clock_mode {self.clock_mode!r}")
        if self.error_policy not in ("strict", "lenient"):
            raise ScenarioError(f"unknown error_policy {self.error_policy!r}")

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a JSON object")
        try:
            return cls(
                channels=[ChannelSpec(c["id"], ChannelKind(c.get("kind", "sub"))) for c in d.get("channels", [])],
                durations={k: float(v) for k, v in d.get("durations", {}).items()},
                text_rate=float(d.get("text_rate", DEFAULT_TEXT_RATE_MS)),
                clock_mode=d.get("clock_mode", "virtual"),
                interrupts=[
                    (float(i["t_ms"]), InterruptSpec(i.get("reason", "external interrupt")))
                    for i in d.get("interrupts", [])
                ],
                error_policy=d.get("error_policy", "strict"),
            )
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ScenarioError(f"bad scenario: {type(e).__name__}: {e}") from None

    @classmethod
    def load(cls, path: str | Path) -> ScenarioConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ScenarioError(f"cannot read scenario {path}: {e}") from None
        return cls.from_dict(data)


_DONE = object()


class Subscription:
    """Ordered, exactly-once view of a program's events."""

    def __init__(self):
        self._q: queue.Queue = queue.Queue()

    def _put(self, item) -> None:
        self._q.put(item)

    def __iter__(self):
        while True:
            item = self._q.get()
            if item is _DONE:
                return
            yield item

    def get(self, timeout: float | None = None) -> ExecutionEvent | None:
        """Next event, or None once the program has ended."""
        item = self._q.get(timeout=timeout)
        if item is _DONE:
            self._q.put(_DONE)
            return None
        return item


def _as_chunks(source: Iterable) -> Iterable[StreamChunk]:
    for i, c in enumerate(source):
        yield c if isinstance(c, StreamChunk) else StreamChunk(c, i)


class Program:
    """One execution of a chunk stream against a registry.

    Use :func:`open_program` to get the right driver for the scenario's
    clock mode, then :meth:`subscribe` and :meth:`run`.
    """

    def __init__(self, source: Iterable, registry: Registry, scenario: ScenarioConfig | None = None):
        self.registry = registry
        self.scenario = scenario or ScenarioConfig()
        self.strict = self.scenario.error_policy == "strict"
        channels = self._check_channels()
        self._source = _as_chunks(source)
        self.parser = StreamParser(merge_refs=True)
        self.builder = ElementBuilder()
        self.scheduler = Scheduler(channels)
        self.trace = ExecutionTrace()
        self._seq = itertools.count()
        self._records: dict[int, CallRecord] = {}
        self._el_calls: dict[int, BoundCall] = {}
        self._text_buffers: dict[int, list[str]] = {}
        self._subs: list[Subscription] = []
        self._callbacks: list[Callable[[ExecutionEvent], None]] = []
        self._stream_done = False
        self._parse_dead = False
        self._stopped = False  # interrupted or aborted
        self._finished = False
        self._lock = threading.RLock()

    def _check_channels(self) -> list[ChannelSpec]:
        reg = {c.id: c.kind for c in self.registry.channels}
        if self.scenario.channels:
            scn = {c.id: c.kind for c in self.scenario.channels}
            if scn != reg:
                raise ScenarioError(f"scenario channels {sorted(scn)} do not match registry channels {sorted(reg)}")
        return list(self.registry.channels)

    # -- observation --------------------------------------------------------

    def subscribe(self) -> Subscription:
        sub = Subscription()
        with self._lock:
            for ev in self.trace.events:
                sub._put(ev)
            if self._finished:
                sub._put(_DONE)
            self._subs.append(sub)
        return sub

    def on_event(self, callback: Callable[[ExecutionEvent], None]) -> None:
        self._callbacks.append(callback)

    def _now(self) -> float:
        raise NotImplementedError

    def _emit(self, kind: EventKind, call: BoundCall | None = None, detail=None, *, function=None, channel=None, args=None):
        if call is not None:
            function = call.name
            channel = call.channel
            args = dict(call.kwargs)
        ev = ExecutionEvent(next(self._seq), self._now(), kind, channel, function, args or {}, detail)
        self.trace.events.append(ev)
        for s in self._subs:
            s._put(ev)
        for cb in self._callbacks:
            cb(ev)
        return ev

    def _close_subscriptions(self) -> None:
        self._finished = True
        self.trace.calls = [self._records[i] for i in sorted(self._records)]
        for s in self._subs:
            s._put(_DONE)

    # -- stream side --------------------------------------------------------

    def _feed(self, text: str) -> None:
        if self._stopped or self._parse_dead:
            return
        self._handle_parse_events(self.parser.feed(text))

    def _finish_stream(self) -> None:
        self._stream_done = True
        if self._stopped or self._parse_dead:
            return
        self._handle_parse_events(self.parser.finish())
        if self._parse_dead or self._stopped:
            return
        try:
            self.builder.finish(self.parser.offset)
        except ParseError as err:
            self._parse_failure(err)

    def _handle_parse_events(self, events) -> None:
        for ev in events:
            if self._stopped:
                return
            if isinstance(ev, ParseError):
                self._parse_failure(ev)
                return
            self._on_token(ev)

    def _on_token(self, token: FunctionToken) -> None:
        try:
            el_events = self.builder.apply_token(token)
        except ParseError as err:
            self._parse_failure(err)
            return
        for ev in el_events:
            if self._stopped:
                return
            try:
                self._on_element(ev)
            except (MappingError, SchedulingError) as err:
                self._mapping_failure(err, ev.element)

    def _parse_failure(self, err: ParseError) -> None:
        """Parsing is over. Strict: abort. Lenient: close what is open and let
        queued work finish."""
        self._emit(EventKind.FAILED, detail=str(err))
        if self.strict:
            self._abort(err)
            return
        self._parse_dead = True
        # force-reset every open spanning element, innermost first
        el = self.builder.innermost
        while el is not None:
            call = self._el_calls.get(el.uid)
            if call is not None and not self.scheduler.is_done(call):
                self._submit(call, StepKind.RESET)
            el = el.parent
        self.builder._stack.clear()

    def _mapping_failure(self, err: StreamCallError, element: Element) -> None:
        self._emit(EventKind.FAILED, detail=str(err), function=element.name)
        if self.strict:
            self._abort(err)

    def _parent_call(self, element: Element) -> BoundCall | None:
        for anc in element.ancestors():
            call = self._el_calls.get(anc.uid)
            if call is not None:
                return call
        return None

    def _on_element(self, ev: ElementEvent) -> None:
        el = ev.element
        parent_el = el.parent
        in_text = parent_el is not None and parent_el.uid in self._text_buffers
        if ev.kind is ElementEventKind.TEXT_ARRIVED:
            if in_text:
                self._text_buffers[parent_el.uid].append(el.text)
                return
            if self.registry.ignore_blank_text and not el.text.strip():
                return
            self._bind(self.registry.resolve(el), el, StepKind.INVOKE)
            return
        if ev.kind is ElementEventKind.OPENED:
            if in_text:
                raise FormUnsupported(
                    f"<{el.name}> nested inside text-accepting <{parent_el.name}>",
                    el.open_span[0] if el.open_span else None,
                )
            if el.form is ElementForm.SELF_CONTAINED:
                self._bind(self.registry.resolve(el), el, StepKind.INVOKE)
                return
            desc = self.registry.descriptor(el.name)
            if desc.accepts_text_content and Form.SPANNING in desc.forms:
                self._text_buffers[el.uid] = []
                return
            self._bind(self.registry.resolve(el), el, StepKind.ACTIVATE)
            return
        # Closed
        if el.form is not ElementForm.SPANNING:
            return
        if el.uid in self._text_buffers:
            text = "".join(self._text_buffers.pop(el.uid))
            call = self._bind(self.registry.resolve(el, text=text), el, StepKind.ACTIVATE)
            self._submit(call, StepKind.RESET)
            return
        call = self._el_calls.get(el.uid)
        if call is not None:
            self._submit(call, StepKind.RESET)

    def _bind(self, call: BoundCall, el: Element, kind: StepKind) -> BoundCall:
        for w in call.warnings:
            self._emit(EventKind.WARNING, detail=w, function=call.name)
        call.parent = self._parent_call(el)
        wait = self.registry.wait_function
        if wait and call.name == wait and not call.is_text:
            self.scheduler.reassign(call, self.scheduler.main)
        self._el_calls[el.uid] = call
        self._submit(call, kind)
        return call

    def _submit(self, call: BoundCall, kind: StepKind) -> None:
        step = self.scheduler.enqueue(call, kind)
        if step is not None and call.index not in self._records:
            self._records[call.index] = CallRecord(
                call.index,
                call.name,
                call.channel,
                call.form_used.value,
                call.is_text,
                call.parent.index if call.parent is not None else None,
                self._now(),
            )

    # -- execution side -----------------------------------------------------

    def _duration(self, call: BoundCall) -> float:
        if call.is_text:
            return len(call.kwargs[call.function.text_param.name]) * self.scenario.text_rate
        return float(self.scenario.durations.get(call.name, call.function.simulated_duration_ms))

    def _dispatch(self) -> None:
        while not self._stopped:
            ready = self.scheduler.next_dispatchable()
            if not ready:
                return
            self._begin(ready[0])

    def _begin(self, step: Step) -> None:
        raise NotImplementedError

    def _invoke(self, step: Step):
        """Call the bound implementation for ``step``. Returns (ok, result)."""
        call = step.call
        if step.kind is StepKind.RESET:
            fn = self.registry.reset_implementation(call.name)
        else:
            fn = self.registry.implementation(call.name)
        if fn is None:
            return True, None
        try:
            return True, fn(**call.kwargs)
        except Exception as e:  # implementation errors become Failed events
            return False, f"{type(e).__name__}: {e}"

    def _on_started(self, step: Step) -> None:
        self.scheduler.start(step)
        call = step.call
        rec = self._records[call.index]
        if step.kind is StepKind.ACTIVATE:
            rec.start = self._now()
            self._emit(EventKind.ACTIVATED, call)
        elif step.kind is StepKind.INVOKE:
            rec.start = self._now()
            self._emit(EventKind.INVOKED, call)

    def _on_failed(self, step: Step, detail: str) -> None:
        call = step.call
        self.scheduler.complete(step, failed=True)
        rec = self._records[call.index]
        rec.end, rec.outcome = self._now(), "failed"
        self._emit(EventKind.FAILED, call, detail)
        if self.strict:
            self._abort(StreamCallError(f"{call.name} failed: {detail}"))

    def _on_finished(self, step: Step, result=None) -> None:
        """A step ran to completion."""
        call = step.call
        self.scheduler.complete(step)
        rec = self._records[call.index]
        if step.kind is StepKind.ACTIVATE:
            return
        rec.end, rec.outcome = self._now(), "completed"
        detail = None if result is None else str(result)
        if step.kind is StepKind.RESET:
            self._emit(EventKind.RESET, call, detail)
        elif call.is_text:
            self._emit(EventKind.TEXT_SPOKEN, call, call.kwargs[call.function.text_param.name])
        else:
            self._emit(EventKind.COMPLETED, call, detail)

    def _cancel_in_flight(self, reason: str) -> None:
        in_flight = self.scheduler.abort()
        for call in in_flight:
            rec = self._records[call.index]
            rec.end, rec.outcome = self._now(), "interrupted"
            detail = reason
            if call.form_used is Form.SPANNING:
                fn = self.registry.reset_implementation(call.name)
                if fn is not None:
                    try:
                        fn(**call.kwargs)
                    except Exception as e:
                        detail = f"{reason}; reset handler failed: {type(e).__name__}: {e}"
            self._emit(EventKind.INTERRUPTED, call, detail)
        for rec in self._records.values():
            if rec.outcome is None:
                rec.outcome = "dropped"
        self._on_cancelled()

    def _on_cancelled(self) -> None:
        """Driver hook: drop pending completions and timers."""

    def _abort(self, err: StreamCallError) -> None:
        if self._stopped:
            return
        self.trace.error = str(err)
        self._stopped = True
        self._cancel_in_flight(f"aborted: {err}")

    def _do_interrupt(self, spec: InterruptSpec) -> None:
        if self._stopped or self._finished:
            return
        if self._stream_done and self.scheduler.idle and not self.scheduler.active_calls():
            return
        self._stopped = True
        self.trace.interrupted = True
        self._cancel_in_flight(spec.reason)

    # -- public ---------------------------------------------------------------

    def interrupt(self, spec: InterruptSpec | None = None) -> None:
        raise NotImplementedError

    def run(self) -> ExecutionTrace:
        raise NotImplementedError


class VirtualProgram(Program):
    """Deterministic discrete-event driver."""

    _DELIVER, _COMPLETE, _RELEASE, _INTERRUPT = range(4)

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.now = 0.0
        self._heap: list = []
        self._counter = itertools.count()
        self._cancelled = False

    def _now(self) -> float:
        return self.now

    def _push(self, t: float, kind: int, payload=None) -> None:
        heapq.heappush(self._heap, (t, next(self._counter), kind, payload))

    def _pull_next(self) -> None:
        if self._stopped:
            return
        try:
            chunk = next(self._source, None)
        except StreamCallError as err:
            self._emit(EventKind.FAILED, detail=str(err))
            self._abort(err)
            return
        if chunk is None:
            self._finish_stream()
            return
        t = self.now if chunk.t_ms is None else max(self.now, float(chunk.t_ms))
        self._push(t, self._DELIVER, chunk)

    def _begin(self, step: Step) -> None:
        self._on_started(step)
        call = step.call
        ok, result = self._invoke(step)
        if not ok:
            self._on_failed(step, result)
            return
        if step.kind is StepKind.ACTIVATE:
            self._on_finished(step)
            hold = self._duration(call)
            if hold > 0:
                self.scheduler.hold(call)
                self._push(self.now + hold, self._RELEASE, call)
            return
        d = 0.0 if step.kind is StepKind.RESET else self._duration(call)
        if d <= 0:
            self._on_finished(step, result)
        else:
            self._push(self.now + d, self._COMPLETE, (step, result))

    def _on_cancelled(self) -> None:
        self._cancelled = True

    def interrupt(self, spec: InterruptSpec | None = None) -> None:
        """Interrupt at the current virtual time (use from event callbacks)."""
        self._push(self.now, self._INTERRUPT, spec or InterruptSpec())

    def run(self) -> ExecutionTrace:
        for t, spec in sorted(self.scenario.interrupts, key=lambda x: x[0]):
            self._push(t, self._INTERRUPT, spec)
        self._pull_next()
        self._dispatch()
        while self._heap:
            t, _, kind, payload = heapq.heappop(self._heap)
            self.now = t
            if kind == self._DELIVER:
                self._feed(payload.text)
                self._pull_next()
            elif kind == self._COMPLETE:
                if not self._cancelled:
                    step, result = payload
                    self._on_finished(step, result)
            elif kind == self._RELEASE:
                self.scheduler.release(payload)
            else:
                self._do_interrupt(payload)
            self._dispatch()
        if not self._stopped and (not self.scheduler.idle or self.scheduler.active_calls()):
            self.trace.error = str(StalledProgram(f"work left undispatched: {self.scheduler.snapshot()}"))
        self._close_subscriptions()
        return self.trace


class RealTimeProgram(Program):
    """Wall-clock driver: one worker thread per channel, serialized core."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self._t0 = time.monotonic()
        self._stop = threading.Event()
        self._cond = threading.Condition(self._lock)
        self._workers: dict[str, queue.Queue] = {}
        self._cancel_tokens: dict[int, threading.Event] = {}
        self._timers: list[threading.Timer] = []

    def _now(self) -> float:
        return round((time.monotonic() - self._t0) * 1000.0, 3)

    def _begin(self, step: Step) -> None:
        self._on_started(step)
        token = threading.Event()
        self._cancel_tokens[step.call.index] = token
        self._workers[step.call.channel].put((step, token))

    def _worker(self, channel: str) -> None:
        q = self._workers[channel]
        while True:
            item = q.get()
            if item is None:
                return
            step, token = item
            if token.is_set():
                continue
            ok, result = self._invoke(step)
            call = step.call
            d = 0.0
            if ok and step.kind is StepKind.INVOKE:
                d = self._duration(call)
            cancelled = token.wait(d / 1000.0) if d > 0 else token.is_set()
            with self._lock:
                if cancelled or self._stopped:
                    continue
                if not ok:
                    self._on_failed(step, result)
                else:
                    self._on_finished(step, result)
                    if step.kind is StepKind.ACTIVATE:
                        hold = self._duration(call)
                        if hold > 0:
                            self.scheduler.hold(call)
                            self._timer(hold, self._release, call)
                self._dispatch()
                self._cond.notify_all()

    def _timer(self, delay_ms: float, fn, *args) -> None:
        t = threading.Timer(delay_ms / 1000.0, fn, args)
        t.daemon = True
        self._timers.append(t)
        t.start()

    def _release(self, call: BoundCall) -> None:
        with self._lock:
            self.scheduler.release(call)
            self._dispatch()
            self._cond.notify_all()

    def _on_cancelled(self) -> None:
        for token in self._cancel_tokens.values():
            token.set()
        self._stop.set()
        self._cond.notify_all()

    def interrupt(self, spec: InterruptSpec | None = None) -> None:
        """Interrupt now; safe from any thread or signal handler context."""
        with self._lock:
            self._do_interrupt(spec or InterruptSpec())
            self._cond.notify_all()

    def _done(self) -> bool:
        return self._stopped or (
            self._stream_done and self.scheduler.idle and not self.scheduler.active_calls()
        )

    def run(self) -> ExecutionTrace:
        self._t0 = time.monotonic()
        threads = []
        for cid in self.scheduler.channels:
            self._workers[cid] = queue.Queue()
            th = threading.Thread(target=self._worker, args=(cid,), daemon=True, name=f"channel-{cid}")
            th.start()
            threads.append(th)
        for t, spec in self.scenario.interrupts:
            self._timer(t, self.interrupt, spec)
        try:
            for chunk in self._source:
                if self._stop.is_set():
                    break
                if chunk.t_ms is not None:
                    delay = self._t0 + chunk.t_ms / 1000.0 - time.monotonic()
                    if delay > 0 and self._stop.wait(delay):
                        break
                with self._lock:
                    self._feed(chunk.text)
                    self._dispatch()
        except StreamCallError as err:
            with self._lock:
                self._emit(EventKind.FAILED, detail=str(err))
                self._abort(err)
        with self._lock:
            if not self._stopped:
                self._finish_stream()
                self._dispatch()
            while not self._done():
                self._cond.wait(0.05)
            self._close_subscriptions()
        for q in self._workers.values():
            q.put(None)
        for t in self._timers:
            t.cancel()
        return self.trace


def open_program(source: Iterable, registry: Registry, scenario: ScenarioConfig | None = None) -> Program:
    scenario = scenario or ScenarioConfig()
    cls = RealTimeProgram if scenario.clock_mode == "realtime" else VirtualProgram
    return cls(source, registry, scenario)


def run_program(source: Iterable, registry: Registry, scenario: ScenarioConfig | None = None) -> ExecutionTrace:
    """Run ``source`` to completion and return its trace."""
    return open_program(source, registry, scenario).run()
