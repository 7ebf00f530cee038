"""Chunk sources: recorded trace replay, throttling, and a live HTTP client."""

from __future__ import annotations

import json
import os
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import httpx

from .errors import ConnectFailed, MalformedTraceFile, ProtocolError, StreamAborted
from .tokens import StreamChunk

__all__ = [
    "TraceRecord",
    "read_trace",
    "write_trace",
    "open_trace",
    "throttle",
    "LiveEndpoint",
    "open_live",
    "default_decode",
    "API_KEY_ENV",
]

API_KEY_ENV = "STREAMCALL_API_KEY"


@dataclass(frozen=True)
class TraceRecord:
    t_ms: int
    chunk: str


def read_trace(path: str | Path) -> list[TraceRecord]:
    """Load and validate a trace file (one ``{t_ms, chunk}`` object per line)."""
    records: list[TraceRecord] = []
    last = 0
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedTraceFile(f"invalid JSON ({e.msg})", n) from None
            if not isinstance(obj, dict) or set(obj) != {"t_ms", "chunk"}:
                raise MalformedTraceFile("record must have exactly the fields t_ms and chunk", n)
            t, chunk = obj["t_ms"], obj["chunk"]
            if isinstance(t, bool) or not isinstance(t, int) or t < 0:
                raise MalformedTraceFile(f"t_ms must be a non-negative integer, got {t!r}", n)
            if not isinstance(chunk, str):
                raise MalformedTraceFile("chunk must be a string", n)
            if t < last:
                raise MalformedTraceFile(f"t_ms goes backwards ({t} < {last})", n)
            last = t
            records.append(TraceRecord(t, chunk))
    return records


def write_trace(path: str | Path, records: Iterable[tuple[int, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t, chunk in records:
            fh.write(json.dumps({"t_ms": t, "chunk": chunk}, ensure_ascii=False) + "\n")


def open_trace(path: str | Path, speed_factor: float = 1.0) -> Iterator[StreamChunk]:
    """Replay a trace file as timed chunks.

    Offsets are multiplied by ``speed_factor``; 0 delivers everything at
    t=0 in file order. The file is validated up front so a bad line fails
    before any chunk is handed out.
    """
    if speed_factor < 0:
        raise ValueError("speed_factor must be >= 0")
    records = read_trace(path)
    return (StreamChunk(r.chunk, i, r.t_ms * speed_factor) for i, r in enumerate(records))


def throttle(text: str, chunk_size: int = 1, tick_ms: float = 1.0, start_ms: float = 0.0) -> Iterator[StreamChunk]:
    """Split ``text`` into ``chunk_size`` pieces, one per tick."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    for i in range(0, len(text), chunk_size):
        k = i // chunk_size
        yield StreamChunk(text[i : i + chunk_size], k, start_ms + k * tick_ms)


# -- live streaming ------------------------------------------------------------


def default_decode(payload: str) -> str | None:
    """Extract a text delta from one SSE/NDJSON payload.

    Accepts a bare JSON string, or an object with a ``delta``/``text``/
    ``content`` string (OpenAI-style ``choices[0].delta.content`` too).
    Returns None for payloads carrying no text.
    """
    try:
        obj = json.loads(payload)
    except json.JSONDecodeError:
        raise ProtocolError(f"payload is not JSON: {payload[:60]!r}") from None
    if isinstance(obj, str):
        return obj
    if not isinstance(obj, dict):
        raise ProtocolError(f"unexpected payload type {type(obj).__name__}")
    for key in ("delta", "text", "content"):
        v = obj.get(key)
        if isinstance(v, str):
            return v
        if isinstance(v, dict) and isinstance(v.get("text"), str):
            return v["text"]
    choices = obj.get("choices")
    if isinstance(choices, list) and choices:
        delta = choices[0].get("delta") or {}
        if isinstance(delta.get("content"), str):
            return delta["content"]
    return None


@dataclass
class LiveEndpoint:
    url: str
    headers: dict = field(default_factory=dict)
    body: dict | None = None
    timeout_s: float = 30.0
    decode: Callable[[str], str | None] = default_decode


_END = object()


def _iter_payloads(lines: Iterable[str]) -> Iterator[str]:
    """Yield payloads from SSE (``data:`` lines) or NDJSON framing."""
    for raw in lines:
        line = raw.rstrip("\r")
        if not line or line.startswith(":"):
            continue
        if line.startswith("data:"):
            data = line[5:].lstrip(" ")
            if data.strip() == "[DONE]":
                return
            yield data
        elif line.startswith(("event:", "id:", "retry:")):
            continue
        else:
            yield line


def _pump(endpoint: LiveEndpoint, out: queue.Queue, stop: threading.Event) -> None:
    headers = dict(endpoint.headers)
    key = os.environ.get(API_KEY_ENV)
    if key and "Authorization" not in headers:
        headers["Authorization"] = f"Bearer {key}"
    method = "POST" if endpoint.body is not None else "GET"
    try:
        with httpx.Client(timeout=endpoint.timeout_s) as client:
            with client.stream(method, endpoint.url, headers=headers, json=endpoint.body) as resp:
                if resp.status_code >= 400:
                    out.put(ConnectFailed(f"{endpoint.url} answered HTTP {resp.status_code}"))
                    return
                for payload in _iter_payloads(resp.iter_lines()):
                    if stop.is_set():
                        return
                    text = endpoint.decode(payload)
                    if text:
                        out.put(text)
    except (httpx.ConnectError, httpx.ConnectTimeout, httpx.UnsupportedProtocol, httpx.InvalidURL) as e:
        out.put(ConnectFailed(f"cannot reach {endpoint.url}: {e}"))
    except httpx.HTTPError as e:
        out.put(StreamAborted(f"stream from {endpoint.url} broke: {e}"))
    except ProtocolError as e:
        out.put(e)
    finally:
        out.put(_END)


def open_live(
    url: str,
    headers: dict | None = None,
    body: dict | None = None,
    *,
    decode: Callable[[str], str | None] = default_decode,
    timeout_s: float = 30.0,
) -> Iterator[StreamChunk]:
    """Stream text deltas from an HTTP endpoint as chunks, in arrival order.

    A transport thread fills a buffer; the returned iterator is the single
    consumer. Transport failures are raised from the iterator.
    """
    endpoint = LiveEndpoint(url, headers or {}, body, timeout_s, decode)
    out: queue.Queue = queue.Queue()
    stop = threading.Event()
    th = threading.Thread(target=_pump, args=(endpoint, out, stop), daemon=True, name="live-source")
    th.start()

    def gen():
        seq = 0
        try:
            while True:
                item = out.get()
                if item is _END:
                    return
                if isinstance(item, Exception):
                    raise item
                yield StreamChunk(item, seq)
                seq += 1
        finally:
            stop.set()

    return gen()
