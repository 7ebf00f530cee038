import random

import pytest

from helpers import law_violations, oracle_schedules, random_program, scheduler_schedule
from streamcall.errors import AlreadyEnqueued, LifecycleViolation, UnknownChannel
from streamcall.executor import ExecutionEvent, ExecutionTrace, ScenarioConfig, run_program
from streamcall.registry import BoundCall, ChannelKind, ChannelSpec, Form, FunctionDescriptor, ParamSpec, Registry
from streamcall.scheduler import Scheduler, StepKind, build_wait

CH = [ChannelSpec("C0", ChannelKind.MAIN), ChannelSpec("C1"), ChannelSpec("C2")]
BOTH = frozenset({Form.ATOMIC, Form.SPANNING})


def call(name, channel, form=Form.ATOMIC, parent=None, text=False):
    d = FunctionDescriptor(name, (), "", channel, forms=BOTH)
    c = BoundCall(d, (), form, channel, is_text=text)
    c.parent = parent
    return c


def heads(s):
    return [(st.call.name, st.kind.value) for st in s.next_dispatchable()]


def test_fifo_per_channel():
    s = Scheduler(CH)
    a, b = call("a", "C1"), call("b", "C1")
    sa = s.enqueue(a, StepKind.INVOKE)
    s.enqueue(b, StepKind.INVOKE)
    assert heads(s) == [("a", "Invoke")]
    s.start(sa)
    assert heads(s) == []
    s.complete(sa)
    assert heads(s) == [("b", "Invoke")]


def test_channels_run_concurrently():
    s = Scheduler(CH)
    s.enqueue(call("a", "C1"), StepKind.INVOKE)
    s.enqueue(call("b", "C2"), StepKind.INVOKE)
    assert heads(s) == [("a", "Invoke"), ("b", "Invoke")]


def test_main_call_gates_later_calls_until_done():
    s = Scheduler(CH)
    m = s.enqueue(call("m", "C0"), StepKind.INVOKE)
    s.enqueue(call("x", "C1"), StepKind.INVOKE)
    assert heads(s) == [("m", "Invoke")]
    s.start(m)
    assert heads(s) == []
    assert not s.gate_open
    s.complete(m)
    assert heads(s) == [("x", "Invoke")]
    assert s.gate_open


def test_gate_does_not_block_earlier_calls():
    s = Scheduler(CH)
    x = s.enqueue(call("x", "C1"), StepKind.INVOKE)
    s.start(x)
    s.enqueue(call("m", "C0"), StepKind.INVOKE)
    s.enqueue(call("y", "C2"), StepKind.INVOKE)
    # x is still running; m may start; y waits behind m
    assert heads(s) == [("m", "Invoke")]


def test_spanning_holds_channel_except_descendants():
    s = Scheduler(CH)
    p = call("p", "C1", Form.SPANNING)
    act = s.enqueue(p, StepKind.ACTIVATE)
    kid = call("k", "C1", parent=p)
    s.start(act)
    s.complete(act)
    s.enqueue(kid, StepKind.INVOKE)
    other = call("o", "C1")
    s.enqueue(other, StepKind.INVOKE)
    assert heads(s) == [("k", "Invoke")]
    st = s.next_dispatchable()[0]
    s.start(st)
    s.complete(st)
    s.enqueue(p, StepKind.RESET)
    # FIFO: 'o' was queued before the reset
    assert heads(s) == []


def test_reset_waits_for_children():
    s = Scheduler(CH)
    p = call("p", "C1", Form.SPANNING)
    act = s.enqueue(p, StepKind.ACTIVATE)
    s.start(act)
    s.complete(act)
    kid = call("k", "C2", parent=p)
    ks = s.enqueue(kid, StepKind.INVOKE)
    s.enqueue(p, StepKind.RESET)
    assert heads(s) == [("k", "Invoke")]
    s.start(ks)
    assert heads(s) == []
    s.complete(ks)
    assert heads(s) == [("p", "Reset")]


def test_hold_delays_reset():
    s = Scheduler(CH)
    p = call("p", "C1", Form.SPANNING)
    act = s.enqueue(p, StepKind.ACTIVATE)
    s.start(act)
    s.complete(act)
    s.hold(p)
    s.enqueue(p, StepKind.RESET)
    assert heads(s) == []
    s.release(p)
    assert heads(s) == [("p", "Reset")]


def test_child_waits_for_parent_activation():
    s = Scheduler(CH)
    p = call("p", "C1", Form.SPANNING)
    blocker = s.enqueue(call("b", "C1"), StepKind.INVOKE)
    s.start(blocker)
    s.enqueue(p, StepKind.ACTIVATE)
    s.enqueue(call("k", "C2", parent=p), StepKind.INVOKE)
    assert heads(s) == []


def test_text_goes_to_main():
    s = Scheduler(CH)
    t = call("say", "C1", text=True)
    s.enqueue(t, StepKind.INVOKE)
    assert t.channel == "C0"


def test_lifecycle_violations():
    s = Scheduler(CH)
    a = call("a", "C1")
    with pytest.raises(LifecycleViolation):
        s.enqueue(a, StepKind.RESET)
    with pytest.raises(LifecycleViolation):
        s.enqueue(a, StepKind.ACTIVATE)
    s.enqueue(a, StepKind.INVOKE)
    with pytest.raises(LifecycleViolation):
        s.enqueue(a, StepKind.INVOKE)
    p = call("p", "C2", Form.SPANNING)
    s.enqueue(p, StepKind.ACTIVATE)
    s.enqueue(p, StepKind.RESET)
    with pytest.raises(LifecycleViolation):
        s.enqueue(p, StepKind.RESET)


def test_start_must_be_dispatchable():
    s = Scheduler(CH)
    a = s.enqueue(call("a", "C1"), StepKind.INVOKE)
    b = s.enqueue(call("b", "C1"), StepKind.INVOKE)
    with pytest.raises(LifecycleViolation):
        s.start(b)
    s.start(a)


def test_unknown_channel_and_reassign():
    s = Scheduler(CH)
    with pytest.raises(UnknownChannel):
        s.enqueue(call("a", "C9"), StepKind.INVOKE)
    c = call("b", "C1")
    s.reassign(c, "C2")
    assert c.channel == "C2"
    s.enqueue(c, StepKind.INVOKE)
    with pytest.raises(AlreadyEnqueued):
        s.reassign(c, "C1")


def test_exactly_one_main_channel():
    with pytest.raises(ValueError):
        Scheduler([ChannelSpec("a"), ChannelSpec("b")])


def test_abort_drains_and_reports_in_flight():
    s = Scheduler(CH)
    w = call("wait", "C0", Form.SPANNING)
    act = s.enqueue(w, StepKind.ACTIVATE)
    s.start(act)
    s.complete(act)
    s.enqueue(call("k", "C1", parent=w), StepKind.INVOKE)
    s.enqueue(call("later", "C2"), StepKind.INVOKE)
    assert [c.name for c in s.abort()] == ["wait"]
    snap = s.snapshot()
    assert snap.gate_owners == () and all(not q for q in snap.queues.values())
    assert s.idle and s.gate_open


def test_build_wait():
    reg = Registry(channels=CH)
    reg.register(FunctionDescriptor("wait", (), "", "C0", forms=frozenset({Form.SPANNING})))
    kids = [call("a", "C1"), call("b", "C2")]
    w = build_wait(reg, kids)
    assert w.channel == "C0" and w.form_used is Form.SPANNING
    assert all(k.parent is w for k in kids)


def test_wait_is_pinned_to_main_even_if_declared_elsewhere():
    reg = Registry(channels=CH)
    reg.register(FunctionDescriptor("say", (ParamSpec("text", "string"),), "", "C0", accepts_text_content=True))
    reg.register(FunctionDescriptor("wait", (), "", "C1", forms=frozenset({Form.SPANNING})))
    reg.register(FunctionDescriptor("a", (), "", "C2", simulated_duration_ms=100))
    trace = run_program(["<wait><a/></wait>"], reg)
    (w,) = [iv for iv in trace.intervals() if iv.function == "wait"]
    assert w.channel == "C0" and (w.start, w.end) == (0, 100)


# -- laws over random programs ------------------------------------------------------


@pytest.mark.parametrize("seed", range(4))
def test_law_suite_random_programs(seed):
    rng = random.Random(1000 + seed)
    for _ in range(250):
        prog = random_program(rng)
        trace = run_program(prog.chunks(), prog.registry(), ScenarioConfig())
        assert law_violations(prog, trace) == [], prog.tokens


def test_brute_force_oracle_small_programs():
    rng = random.Random(77)
    checked = 0
    while checked < 300:
        prog = random_program(rng, max_calls=4)
        trace = run_program(prog.chunks(), prog.registry(), ScenarioConfig())
        schedules = oracle_schedules(prog)
        assert ("STUCK",) not in schedules
        assert scheduler_schedule(prog, trace) in schedules, prog.tokens
        checked += 1


def test_law_checker_flags_a_broken_trace():
    # the checker itself must reject a schedule that violates the gate
    rng = random.Random(3)
    while True:
        prog = random_program(rng)
        if any(c.channel == "C0" and c.kind == "atomic" and c.duration for c in prog.calls[:-1]):
            break
    trace = run_program(prog.chunks(), prog.registry(), ScenarioConfig())
    shifted = ExecutionTrace([ExecutionEvent(e.seq, 0.0 if e.kind.value in ("Activated", "Invoked") else e.t_ms, e.kind, e.channel, e.function, e.args, e.detail) for e in trace.events])
    assert law_violations(prog, shifted)
