"""Multi-channel dispatch core.

The scheduler owns no clock. Drivers (virtual or real-time) enqueue call
steps, ask which steps may start, and report starts and completions back.
Rules enforced on every dispatch decision:

* one step at a time per channel, FIFO per channel;
* an activated spanning call holds its channel until its reset, except for
  its own descendants;
* a main-channel call blocks every later call (by stream index) that is not
  its descendant, from the moment it is enqueued until it completes;
* a call starts only after its parent's activation;
* a reset waits for the RFToken, for every child to complete and for any
  minimum hold time the driver has placed on the call.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .errors import AlreadyEnqueued, LifecycleViolation, UnknownChannel
from .registry import BoundCall, ChannelKind, ChannelSpec, Form, Registry

__all__ = ["StepKind", "Step", "Channel", "DispatchState", "Scheduler", "build_wait"]


class StepKind(str, Enum):
    ACTIVATE = "Activate"
    INVOKE = "Invoke"
    RESET = "Reset"


@dataclass(eq=False)
class Step:
    call: BoundCall
    kind: StepKind
    order: int

    def __repr__(self):
        return f"Step({self.kind.value} {self.call.name}#{self.call.index} on {self.call.channel})"


@dataclass(eq=False)
class Channel:
    id: str
    kind: ChannelKind
    queue: deque = field(default_factory=deque)
    running: Step | None = None
    holders: list = field(default_factory=list)

    @property
    def busy(self) -> bool:
        return self.running is not None


@dataclass
class _CallState:
    call: BoundCall
    started: bool = False
    activated: bool = False
    reset_enqueued: bool = False
    done: bool = False
    failed: bool = False
    pending_children: int = 0
    held: bool = False


@dataclass(frozen=True)
class DispatchState:
    """Read-only dump of the scheduler, for diagnostics and tests."""

    gate_owners: tuple[str, ...]
    queues: dict
    running: dict
    holders: dict
    pending_children: dict


class Scheduler:
    def __init__(self, channels: list[ChannelSpec]):
        mains = [c for c in channels if c.kind is ChannelKind.MAIN]
        if len(mains) != 1:
            raise ValueError(f"exactly one main channel required, got {len(mains)}")
        self.main = mains[0].id
        self.channels: dict[str, Channel] = {c.id: Channel(c.id, c.kind) for c in channels}
        self._states: dict[int, _CallState] = {}
        self._gates: list[BoundCall] = []  # main-channel calls not yet completed
        self._index = itertools.count()
        self._order = itertools.count()

    # -- channel assignment -------------------------------------------------

    def assign_channel(self, call: BoundCall) -> str:
        channel = self.main if call.is_text else call.channel
        if channel not in self.channels:
            raise UnknownChannel(f"{call.name}: channel {channel!r} is not registered")
        return channel

    def reassign(self, call: BoundCall, channel: str) -> None:
        if call.index is not None:
            raise AlreadyEnqueued(f"{call.name}#{call.index} is already queued")
        if channel not in self.channels:
            raise UnknownChannel(f"channel {channel!r} is not registered")
        call.channel = channel

    # -- queueing -------------------------------------------------------------

    def state(self, call: BoundCall) -> _CallState | None:
        return self._states.get(call.index) if call.index is not None else None

    def enqueue(self, call: BoundCall, kind: StepKind) -> Step | None:
        """Queue one lifecycle step. Returns None when the step is moot
        (reset of a call that already failed or was aborted)."""
        st = self.state(call)
        if kind is StepKind.RESET:
            if st is None or call.form_used is not Form.SPANNING:
                raise LifecycleViolation(f"Reset of {call.name} before Activate")
            if st.reset_enqueued:
                raise LifecycleViolation(f"double Reset of {call.name}")
            st.reset_enqueued = True
            if st.done:
                return None
        else:
            if st is not None:
                raise LifecycleViolation(f"double {kind.value} of {call.name}")
            expected = Form.SPANNING if kind is StepKind.ACTIVATE else Form.ATOMIC
            if call.form_used is not expected:
                raise LifecycleViolation(f"{kind.value} on {call.form_used.value} call {call.name}")
            call.channel = self.assign_channel(call)
            call.index = next(self._index)
            st = self._states[call.index] = _CallState(call)
            parent = self.state(call.parent) if call.parent is not None else None
            if parent is not None and not parent.done:
                parent.pending_children += 1
            if call.channel == self.main:
                self._gates.append(call)
        step = Step(call, kind, next(self._order))
        self.channels[call.channel].queue.append(step)
        return step

    # -- dispatch -------------------------------------------------------------

    def _eligible(self, step: Step) -> bool:
        call = step.call
        st = self._states[call.index]
        ch = self.channels[call.channel]
        if ch.running is not None:
            return False
        if ch.holders:
            holder = ch.holders[-1]
            if holder is not call and not call.is_descendant_of(holder):
                return False
        for g in self._gates:
            if g.index >= call.index:
                break
            if not call.is_descendant_of(g):
                return False
        if step.kind is StepKind.RESET:
            return st.pending_children == 0 and not st.held
        parent = self.state(call.parent) if call.parent is not None else None
        if parent is not None and not (parent.activated or parent.done):
            return False
        return True

    def next_dispatchable(self) -> list[Step]:
        """Steps that may start now, in enqueue order."""
        heads = [ch.queue[0] for ch in self.channels.values() if ch.queue]
        return sorted((s for s in heads if self._eligible(s)), key=lambda s: s.order)

    def start(self, step: Step) -> None:
        ch = self.channels[step.call.channel]
        if not ch.queue or ch.queue[0] is not step:
            raise LifecycleViolation(f"{step!r} is not at the head of {ch.id}")
        if not self._eligible(step):
            raise LifecycleViolation(f"{step!r} is not dispatchable")
        ch.queue.popleft()
        ch.running = step
        self._states[step.call.index].started = True

    def complete(self, step: Step, failed: bool = False) -> None:
        call = step.call
        st = self._states[call.index]
        ch = self.channels[call.channel]
        if ch.running is step:
            ch.running = None
        if step.kind is StepKind.ACTIVATE and not failed:
            st.activated = True
            ch.holders.append(call)
            return
        if step.kind is StepKind.RESET:
            _discard(ch.holders, call)
        self._finish(st, failed)

    def _finish(self, st: _CallState, failed: bool) -> None:
        if st.done:
            return
        st.done = True
        st.failed = failed
        call = st.call
        for ch in self.channels.values():
            _discard(ch.holders, call)
        _discard(self._gates, call)
        parent = self.state(call.parent) if call.parent is not None else None
        if parent is not None and parent.pending_children > 0:
            parent.pending_children -= 1

    def hold(self, call: BoundCall) -> None:
        """Delay the call's reset until :meth:`release`."""
        self._states[call.index].held = True

    def release(self, call: BoundCall) -> None:
        st = self.state(call)
        if st is not None:
            st.held = False

    # -- bulk operations ------------------------------------------------------

    def drain(self) -> list[Step]:
        """Drop every queued (not running) step."""
        dropped = []
        for ch in self.channels.values():
            dropped.extend(ch.queue)
            ch.queue.clear()
        return sorted(dropped, key=lambda s: s.order)

    def running_steps(self) -> list[Step]:
        return sorted(
            (ch.running for ch in self.channels.values() if ch.running is not None),
            key=lambda s: s.call.index,
        )

    def active_calls(self) -> list[BoundCall]:
        """Calls that have started and not completed, in stream order."""
        return [st.call for _, st in sorted(self._states.items()) if st.started and not st.done]

    def abort(self) -> list[BoundCall]:
        """Drain queues and mark every unfinished call done. Returns the calls
        that were in flight."""
        in_flight = self.active_calls()
        self.drain()
        for ch in self.channels.values():
            ch.running = None
            ch.holders.clear()
        for st in self._states.values():
            if not st.done:
                st.done = True
                st.failed = True
        self._gates.clear()
        return in_flight

    def is_done(self, call: BoundCall) -> bool:
        st = self.state(call)
        return st is not None and st.done

    @property
    def idle(self) -> bool:
        return all(not ch.queue and ch.running is None for ch in self.channels.values())

    @property
    def gate_open(self) -> bool:
        return not self._gates

    def snapshot(self) -> DispatchState:
        return DispatchState(
            gate_owners=tuple(f"{g.name}#{g.index}" for g in self._gates),
            queues={cid: [repr(s) for s in ch.queue] for cid, ch in self.channels.items()},
            running={cid: repr(ch.running) for cid, ch in self.channels.items() if ch.running},
            holders={cid: [f"{c.name}#{c.index}" for c in ch.holders] for cid, ch in self.channels.items() if ch.holders},
            pending_children={
                f"{st.call.name}#{i}": st.pending_children
                for i, st in sorted(self._states.items())
                if st.pending_children
            },
        )


def _discard(items: list, obj) -> None:
    for i, x in enumerate(items):
        if x is obj:
            del items[i]
            return


def build_wait(registry: Registry, children_calls: list[BoundCall]) -> BoundCall:
    """Wrap ``children_calls`` in a main-channel wait call.

    Enqueue order for the result: Activate(wait), each child's first step,
    then Reset(wait); the reset fires once every child has completed.
    """
    desc = registry.descriptor(registry.wait_function)
    if Form.SPANNING not in desc.forms:
        raise LifecycleViolation(f"{desc.name!r} must support the spanning form")
    args = tuple(p.default for p in desc.params)
    wait = BoundCall(desc, args, Form.SPANNING, registry.main_channel)
    for c in children_calls:
        c.parent = wait
    return wait
