"""Command-line entry point: ``python -m streamcall <command> ...``."""

from __future__ import annotations

import argparse
import json
import signal
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from .bcm import PatternSpec, check_pattern, complexity, load_results, mean_normalized, normalized_score, raw_score
from .elements import ElementBuilder
from .errors import ParseError, StreamCallError
from .executor import EventKind, ExecutionTrace, InterruptSpec, Program, ScenarioConfig, open_program
from .registry import load_manifest
from .sources import API_KEY_ENV, open_live, open_trace, throttle
from .tokens import StreamParser

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

FEEDBACK_HEADER = "[execution results]"
FEEDBACK_LINE = "- {kind} {function} on {channel} at {t_ms} ms{detail}"
FEEDBACK_KINDS = (EventKind.COMPLETED, EventKind.RESET, EventKind.FAILED, EventKind.INTERRUPTED)


def _error_dict(err: StreamCallError) -> dict:
    return {"error": err.code, "message": err.message, "offset": err.offset}


def _chunks_of(text: str, size: int | None):
    if not size:
        return [text]
    return [text[i : i + size] for i in range(0, len(text), size)]


def cmd_parse(args) -> int:
    text = Path(args.input).read_text(encoding="utf-8")
    parser = StreamParser(merge_refs=args.merge_refs)
    builder = ElementBuilder()
    out = sys.stdout

    def emit(events) -> StreamCallError | None:
        for ev in events:
            if isinstance(ev, ParseError):
                return ev
            out.write(json.dumps(ev.to_dict(), ensure_ascii=False) + "\n")
            try:
                builder.apply_token(ev)
            except ParseError as err:
                return err
        return None

    err = None
    for piece in _chunks_of(text, args.chunk_size):
        err = emit(parser.feed(piece))
        if err:
            break
    if err is None:
        err = emit(parser.finish())
    if err is None:
        try:
            builder.finish(parser.offset)
        except ParseError as e:
            err = e
    if err is not None:
        out.write(json.dumps(_error_dict(err)) + "\n")
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


@contextmanager
def _sigint_interrupts(program: Program):
    """Map Ctrl-C to a program interrupt while the run is in progress."""
    try:
        prev = signal.signal(signal.SIGINT, lambda *_: program.interrupt(InterruptSpec("SIGINT")))
    except ValueError:  # not the main thread
        yield
        return
    try:
        yield
    finally:
        signal.signal(signal.SIGINT, prev)


def _execute(source, args, clock_mode: str | None = None) -> int:
    registry = load_manifest(args.registry)
    scenario = ScenarioConfig.load(args.scenario)
    if clock_mode:
        scenario.clock_mode = clock_mode
    program = open_program(source, registry, scenario)
    t0 = time.perf_counter()
    with _sigint_interrupts(program):
        trace = program.run()
    elapsed = time.perf_counter() - t0
    if args.out:
        trace.save(args.out)
    else:
        sys.stdout.write(trace.to_jsonl())
    status = EXIT_FAIL if trace.error else EXIT_OK
    report = {
        "status": status,
        "counts": trace.counts(),
        "events": len(trace.events),
        "trace": args.out,
        "wall_ms": round(elapsed * 1000, 3),
        "clock_ms": trace.events[-1].t_ms if trace.events else 0,
        "error": trace.error,
    }
    print(json.dumps(report), file=sys.stderr)
    return status


def cmd_run(args) -> int:
    path = Path(args.stream)
    if path.suffix == ".jsonl":
        source = open_trace(path, 1.0)
    else:
        text = path.read_text(encoding="utf-8")
        source = throttle(text, args.chunk_size or max(1, len(text)), tick_ms=0.0)
    return _execute(source, args)


def cmd_replay(args) -> int:
    source = open_trace(args.trace, args.speed)
    return _execute(source, args, "realtime" if args.realtime else None)


def cmd_score(args) -> int:
    results = load_results(args.results)
    for r in results:
        print(
            f"{r.task}\tactions={r.action_count}\t{complexity(r.action_count).value}\t"
            f"C={r.correctness}\traw={raw_score(r)}\tnormalized={normalized_score(r)}"
        )
    print(f"mean\t{mean_normalized(results)}")
    return EXIT_OK


def cmd_check(args) -> int:
    trace = ExecutionTrace.load(args.trace)
    spec = PatternSpec.load(args.pattern)
    report = check_pattern(trace, spec, args.tolerance)
    print(f"correctness {report.correctness} ({report.held}/{report.total} relations hold)")
    for v in report.violations:
        print(f"violation: {v}")
    return EXIT_OK if report.correctness == 1.0 else EXIT_FAIL


def cmd_prompt(args) -> int:
    print(load_manifest(args.registry).render_prompt())
    return EXIT_OK


def format_feedback(trace: ExecutionTrace) -> str:
    """Render execution results as the text block appended to the next turn."""
    lines = [FEEDBACK_HEADER]
    for ev in trace.events:
        if ev.kind in FEEDBACK_KINDS:
            detail = f": {ev.detail}" if ev.detail else ""
            lines.append(FEEDBACK_LINE.format(kind=ev.kind.value, function=ev.function, channel=ev.channel, t_ms=ev.t_ms, detail=detail))
    if trace.error:
        lines.append(f"- run error: {trace.error}")
    return "\n".join(lines)


def cmd_repl(args) -> int:
    registry = load_manifest(args.registry)
    scenario = ScenarioConfig.load(args.scenario)
    system = registry.render_prompt()
    messages: list[dict] = []
    headers = {}
    print(f"connected to {args.endpoint}; empty line or EOF quits (key from ${API_KEY_ENV} if set)")
    while True:
        try:
            line = input("> ")
        except EOFError:
            break
        if not line.strip():
            break
        messages.append({"role": "user", "content": line})
        body = {"system": system, "messages": messages, "stream": True}
        program = open_program(open_live(args.endpoint, headers, body), registry, scenario)
        said: list[str] = []
        program.on_event(lambda ev: print(f"  {ev.t_ms:>8} {ev.kind.value:<11} {ev.function or ''} {ev.detail or ''}"))
        program.on_event(lambda ev: said.append(ev.detail or "") if ev.kind is EventKind.TEXT_SPOKEN else None)
        try:
            with _sigint_interrupts(program):
                trace = program.run()
        except StreamCallError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_FAIL
        if trace.error:
            print(f"error: {trace.error}", file=sys.stderr)
        messages.append({"role": "assistant", "content": "".join(said)})
        messages.append({"role": "user", "content": format_feedback(trace)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamcall", description="Streaming function-call runtime.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="print function tokens as JSON lines")
    p.add_argument("--input", required=True)
    p.add_argument("--chunk-size", type=int, default=None)
    p.add_argument("--merge-refs", action="store_true", help="fold references into character runs")
    p.set_defaults(func=cmd_parse)

    def run_args(p):
        p.add_argument("--registry", required=True)
        p.add_argument("--scenario", required=True)
        p.add_argument("--out", default=None, help="trace output path (default: stdout)")

    p = sub.add_parser("run", help="execute a stream file (.jsonl trace or raw text)")
    p.add_argument("--stream", required=True)
    p.add_argument("--chunk-size", type=int, default=None, help="split raw text into chunks of N characters")
    run_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="execute a recorded trace with timed delivery")
    p.add_argument("--trace", required=True)
    p.add_argument("--speed", type=float, default=1.0, help="offset scale factor; 0 delivers immediately")
    p.add_argument("--realtime", action="store_true", help="use wall-clock execution")
    run_args(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("score", help="BCM scores for a results file")
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("check", help="check an execution trace against a pattern spec")
    p.add_argument("--trace", required=True)
    p.add_argument("--pattern", required=True)
    p.add_argument("--tolerance", type=float, default=None, help="override tolerance in ms")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("prompt", help="render the function prompt block")
    p.add_argument("--registry", required=True)
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("repl", help="interactive turns against a live endpoint")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_repl)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "chunk_size", None) is not None and args.chunk_size < 1:
        ap.error("--chunk-size must be >= 1")
    if getattr(args, "speed", None) is not None and args.speed < 0:
        ap.error("--speed must be >= 0")
    try:
        return args.func(args)
    except (StreamCallError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
