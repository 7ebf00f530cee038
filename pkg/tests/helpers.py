"""Shared generators and oracles for the property and acceptance tests."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from pathlib import Path

from streamcall.elements import Element
from streamcall.registry import ChannelKind, ChannelSpec, Form, FunctionDescriptor, ParamSpec, Registry
from streamcall.tokens import StreamChunk

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

# -- forests -------------------------------------------------------------------

NAMES = ["move", "say", "a", "_x", "x.y", "b-2", "ns:tag", "ñame", "Ωmega", "数据", "f1"]
TEXT_ALPHABET = "ab xyz\n\t&<>\"'é中😀]"


def random_text(rng: random.Random, min_len: int = 1, max_len: int = 8) -> str:
    return "".join(rng.choice(TEXT_ALPHABET) for _ in range(rng.randint(min_len, max_len)))


def random_value(rng: random.Random) -> str:
    # no tab/newline: those would be whitespace-normalized by a conforming XML parser
    return "".join(rng.choice("ab &<>\"'é中😀") for _ in range(rng.randint(0, 6)))


def random_params(rng: random.Random) -> tuple:
    keys = rng.sample(["speed", "to", "v", "x_1", "ключ"], rng.randint(0, 3))
    return tuple((k, random_value(rng)) for k in keys)


def random_forest(rng: random.Random, depth: int = 0, max_depth: int = 4, max_items: int = 4) -> list[Element]:
    """Random forest whose character runs are non-empty and never adjacent."""
    out: list[Element] = []
    for _ in range(rng.randint(0 if depth else 1, max_items)):
        roll = rng.random()
        if roll < 0.35 and (not out or out[-1].text is None):
            out.append(Element.character_run(random_text(rng)))
        elif roll < 0.65 or depth >= max_depth:
            out.append(Element.self_contained(rng.choice(NAMES), random_params(rng)))
        else:
            kids = random_forest(rng, depth + 1, max_depth, max_items)
            out.append(Element.spanning(rng.choice(NAMES), random_params(rng), kids))
    return out


def random_partition(rng: random.Random, text: str) -> list[str]:
    if not text:
        return [""]
    cuts = sorted(rng.sample(range(1, len(text)), min(len(text) - 1, rng.randint(0, 12)))) if len(text) > 1 else []
    bounds = [0, *cuts, len(text)]
    return [text[a:b] for a, b in zip(bounds, bounds[1:])]


# -- scheduler programs ----------------------------------------------------------

CHANNELS = [ChannelSpec("C0", ChannelKind.MAIN), ChannelSpec("C1", ChannelKind.SUB), ChannelSpec("C2", ChannelKind.SUB)]
TEXT_RATE = 50


@dataclass
class PCall:
    """One call of a generated program, as the generator laid it out."""

    idx: int
    name: str
    kind: str  # "atomic" | "spanning" | "text" | "wait"
    channel: str
    duration: int  # run time for atomic/text, minimum hold for spanning
    parent: int | None
    open_pos: int  # token position of the first step
    open_t: int
    close_pos: int | None = None
    close_t: int | None = None
    text: str = ""
    children: list[int] = field(default_factory=list)


@dataclass
class GenProgram:
    calls: list[PCall]
    tokens: list[tuple[int, str]]  # (delivery time, token text)

    @property
    def text(self) -> str:
        return "".join(t for _, t in self.tokens)

    def chunks(self) -> list[StreamChunk]:
        return [StreamChunk(t, i, float(at)) for i, (at, t) in enumerate(self.tokens)]

    def ancestors(self, i: int):
        p = self.calls[i].parent
        while p is not None:
            yield p
            p = self.calls[p].parent

    def related(self, a: int, b: int) -> bool:
        return a in self.ancestors(b) or b in self.ancestors(a)

    def registry(self) -> Registry:
        reg = Registry(channels=CHANNELS)
        reg.register(FunctionDescriptor("say", (ParamSpec("text", "string"),), "Speak.", "C0", accepts_text_content=True))
        reg.register(FunctionDescriptor("wait", (), "Wait for nested calls.", "C0", forms=frozenset({Form.SPANNING})))
        for c in self.calls:
            if c.kind in ("atomic", "spanning"):
                reg.register(
                    FunctionDescriptor(
                        c.name, (), "generated", c.channel,
                        forms=frozenset({Form.ATOMIC, Form.SPANNING}), simulated_duration_ms=c.duration,
                    )
                )
        return reg


def random_program(rng: random.Random, max_calls: int = 6, n_channels: int = 3, max_depth: int = 2) -> GenProgram:
    """Random nested program over channels C0..C{n-1} with per-token delivery times."""
    calls: list[PCall] = []
    tokens: list[tuple[int, str]] = []
    clock = [0]
    channels = [c.id for c in CHANNELS[:n_channels]]
    texts = itertools.count()

    def tick() -> int:
        clock[0] += rng.choice([0, 0, 250, 500])
        return clock[0]

    def emit_items(parent: int | None, depth: int, budget: int) -> None:
        n = rng.randint(1 if parent is None else 0, 3)
        for _ in range(n):
            if len(calls) >= budget:
                return
            roll = rng.random()
            idx = len(calls)
            t = tick()
            if roll < 0.15 and (not tokens or not tokens[-1][1][-1:].isalpha()):
                word = "t" + "abcdefghij"[next(texts) % 10] * rng.randint(0, 2)
                c = PCall(idx, "say", "text", "C0", len(word) * TEXT_RATE, parent, len(tokens), t, text=word)
                calls.append(c)
                tokens.append((t, word))
            elif roll < 0.6 or depth >= max_depth:
                ch = rng.choice(channels)
                c = PCall(idx, f"g{idx}", "atomic", ch, rng.choice([0, 500, 1000, 1500]), parent, len(tokens), t)
                calls.append(c)
                tokens.append((t, f"<g{idx}/>"))
            else:
                is_wait = roll > 0.85
                name = "wait" if is_wait else f"g{idx}"
                ch = "C0" if is_wait else rng.choice(channels)
                hold = 0 if is_wait else rng.choice([0, 0, 1000])
                c = PCall(idx, name, "wait" if is_wait else "spanning", ch, hold, parent, len(tokens), t)
                calls.append(c)
                tokens.append((t, f"<{name}>"))
                emit_items(idx, depth + 1, budget)
                c.close_t = tick()
                c.close_pos = len(tokens)
                tokens.append((c.close_t, f"</{name}>"))
            if parent is not None:
                calls[parent].children.append(idx)

    emit_items(None, 0, max_calls)
    for c in calls:
        # a character run is only complete once the next markup arrives
        if c.kind == "text" and c.open_pos + 1 < len(tokens):
            c.open_t = tokens[c.open_pos + 1][0]
    return GenProgram(calls, tokens)


# -- trace laws ------------------------------------------------------------------


def call_intervals(prog: GenProgram, trace) -> dict[int, tuple[float, float, str]]:
    """Map generated call index -> (start, end, outcome) using the trace.

    Same-named calls share a channel and so start in stream order; they are
    matched by the sequence number of their start event.
    """
    starts = {"Activated", "Invoked"}
    open_: dict[tuple, list] = {}
    done: dict[str, list] = {}
    for ev in trace.events:
        key = (ev.channel, ev.function)
        if ev.kind.value in starts:
            open_.setdefault(key, []).append(ev)
        elif ev.kind.value != "Warning" and open_.get(key):
            st = open_[key].pop()
            done.setdefault(ev.function, []).append((st.seq, st.t_ms, ev.t_ms, ev.kind.value))
    out = {}
    used: dict[str, int] = {}
    for lst in done.values():
        lst.sort()
    for c in prog.calls:
        k = used.get(c.name, 0)
        used[c.name] = k + 1
        lst = done.get(c.name, [])
        if k < len(lst):
            _, s0, e0, outcome = lst[k]
            out[c.idx] = (s0, e0, outcome)
    return out


def law_violations(prog: GenProgram, trace) -> list[str]:
    """Check a virtual-mode trace against the scheduling laws."""
    bad: list[str] = []
    if trace.error:
        bad.append(f"run error: {trace.error}")
    seqs = [e.seq for e in trace.events]
    ts = [e.t_ms for e in trace.events]
    if seqs != sorted(set(seqs)) or ts != sorted(ts):
        bad.append("event order not monotone")
    iv = call_intervals(prog, trace)
    for c in prog.calls:
        if c.idx not in iv:
            bad.append(f"call {c.idx} ({c.name}) never ran")
    if bad:
        return bad
    calls = prog.calls
    for c in calls:
        s, e, outcome = iv[c.idx]
        if s < c.open_t:
            bad.append(f"{c.idx} started before delivery")
        if c.kind == "text":
            if c.channel != "C0" or e - s != len(c.text) * TEXT_RATE:
                bad.append(f"text law: {c.idx}")
        if c.kind == "atomic" and e - s != c.duration:
            bad.append(f"duration law: {c.idx}")
        if c.kind in ("spanning", "wait"):
            if e < c.close_t or e < s + c.duration:
                bad.append(f"reset before close/hold: {c.idx}")
            for k in c.children:
                if iv[k][1] > e:
                    bad.append(f"reset gating: {c.idx} ends before child {k}")
        if c.parent is not None and s < iv[c.parent][0]:
            bad.append(f"{c.idx} started before parent {c.parent}")
    for a, b in itertools.combinations(calls, 2):
        if prog.related(a.idx, b.idx):
            continue
        sa, ea, _ = iv[a.idx]
        sb, eb, _ = iv[b.idx]
        if a.channel == b.channel:
            # same channel, unrelated: ordered and disjoint, FIFO by stream order
            if not (ea <= sb):
                bad.append(f"channel law: {a.idx} [{sa},{ea}] vs {b.idx} [{sb},{eb}] on {a.channel}")
        if a.channel == "C0" and sb < ea:
            bad.append(f"gate law: {b.idx} started at {sb} while main call {a.idx} ran until {ea}")
    return bad


# -- brute-force oracle -----------------------------------------------------------


@dataclass(frozen=True)
class _OStep:
    call: int
    kind: str  # "act" | "inv" | "reset"
    pos: int
    t: int


def oracle_schedules(prog: GenProgram, limit: int = 200_000) -> set[tuple]:
    """Every eager schedule consistent with the dispatch rules.

    Explores all interleavings: at each instant any eligible queue head may
    start next; time only advances once nothing is eligible. Returns the
    set of per-call (start, end) tuples reached.
    """
    calls = prog.calls
    steps: list[_OStep] = []
    for c in calls:
        if c.kind in ("spanning", "wait"):
            steps.append(_OStep(c.idx, "act", c.open_pos, c.open_t))
            steps.append(_OStep(c.idx, "reset", c.close_pos, c.close_t))
        else:
            steps.append(_OStep(c.idx, "inv", c.open_pos, c.open_t))
    by_channel: dict[str, list[int]] = {}
    for i, st in sorted(enumerate(steps), key=lambda x: x[1].pos):
        by_channel.setdefault(calls[st.call].channel, []).append(i)
    ancestors = {c.idx: set(prog.ancestors(c.idx)) for c in calls}
    results: set[tuple] = set()
    visited = [0]

    def desc(a: int, b: int) -> bool:
        return b in ancestors[a]

    def run(now, started, done_steps, running, starts, ends, acts):
        visited[0] += 1
        if visited[0] > limit:
            raise RuntimeError("oracle search too large")
        if len(done_steps) == len(steps):
            results.add(tuple((starts[c.idx], ends[c.idx]) for c in calls))
            return
        call_done = {c.idx for c in calls if c.idx in ends}
        holders: dict[str, list[int]] = {}
        for ci in acts:
            if ci not in call_done:
                holders.setdefault(calls[ci].channel, []).append(ci)
        eligible = []
        for ch, queue in by_channel.items():
            head = next((i for i in queue if i not in started), None)
            if head is None or ch in running:
                continue
            st = steps[head]
            c = calls[st.call]
            if now < st.t:
                continue
            if any(h != c.idx and not desc(c.idx, h) for h in holders.get(ch, [])):
                continue
            # main-channel gate: any earlier, unfinished main call not an ancestor
            gated = any(
                g.channel == "C0" and g.open_pos < c.open_pos and g.idx not in call_done and not desc(c.idx, g.idx)
                and g.open_t <= now
                for g in calls
            )
            if gated:
                continue
            if st.kind == "reset":
                if any(k not in call_done for k in c.children):
                    continue
                if now < starts[c.idx] + c.duration:
                    continue
            elif c.parent is not None and c.parent not in acts:
                continue
            eligible.append(head)
        if eligible:
            for i in eligible:
                st = steps[i]
                c = calls[st.call]
                s2 = dict(starts)
                e2 = dict(ends)
                a2 = set(acts)
                r2 = dict(running)
                d2 = set(done_steps)
                if st.kind == "act":
                    s2[c.idx] = now
                    a2.add(c.idx)
                    d2.add(i)
                elif st.kind == "reset":
                    e2[c.idx] = now
                    d2.add(i)
                else:
                    s2[c.idx] = now
                    if c.duration == 0:
                        e2[c.idx] = now
                        d2.add(i)
                    else:
                        r2[c.channel] = (i, now + c.duration)
                run(now, started | {i}, d2, r2, s2, e2, a2)
            return
        future = [end for _, end in running.values()]
        future += [steps[i].t for i in range(len(steps)) if i not in started and steps[i].t > now]
        future += [starts[c.idx] + c.duration for c in calls if c.idx in acts and c.idx not in ends and starts[c.idx] + c.duration > now]
        if not future:
            results.add(("STUCK",))
            return
        t = min(future)
        r2 = {}
        d2 = set(done_steps)
        e2 = dict(ends)
        for ch, (i, end) in running.items():
            if end <= t:
                d2.add(i)
                e2[steps[i].call] = end
            else:
                r2[ch] = (i, end)
        run(t, started, d2, r2, starts, e2, acts)

    run(0, frozenset(), set(), {}, {}, {}, set())
    return results


def scheduler_schedule(prog: GenProgram, trace) -> tuple:
    iv = call_intervals(prog, trace)
    return tuple((iv[c.idx][0], iv[c.idx][1]) for c in prog.calls)
