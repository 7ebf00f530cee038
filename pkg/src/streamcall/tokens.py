"""Incremental function-token parser.

Text arrives in arbitrary chunks (LLM deltas). The parser buffers any
incomplete markup and emits each token as soon as its final character has
been seen::

    >>> p = StreamParser()
    >>> p.feed(StreamChunk('<mo', 0))
    []
    >>> p.feed(StreamChunk('ve speed="1.0"/>', 1))
    [FunctionToken(kind=<TokenKind.SCF: 'SCFToken'>, name='move', params=(('speed', '1.0'),), text=None, span=(0, 19))]

Errors are returned in-band as the last event of a ``feed``/``finish`` call
and leave the parser in a terminal failed state.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

from .errors import (
    BadReference,
    ForbiddenSequence,
    MalformedTag,
    ParseError,
    ParserStateError,
    UnterminatedToken,
)

__all__ = [
    "TokenKind",
    "FunctionToken",
    "StreamChunk",
    "ParseEvent",
    "StreamParser",
    "decode_reference",
    "parse",
    "parse_events",
    "NAME_RE",
]

# XML 1.0 (5th ed.) Name production
_NAME_START = (
    ":A-Z_a-z\u00c0-\u00d6\u00d8-\u00f6\u00f8-\u02ff\u0370-\u037d\u037f-\u1fff"
    "\u200c-\u200d\u2070-\u218f\u2c00-\u2fef\u3001-\ud7ff\uf900-\ufdcf"
    "\ufdf0-\ufffd\U00010000-\U000effff"
)
_NAME_CHAR = _NAME_START + "\\-.0-9\u00b7\u0300-\u036f\u203f-\u2040"
_NAME = f"[{_NAME_START}][{_NAME_CHAR}]*"
_S = "[ \t\r\n]"

NAME_RE = re.compile(_NAME)
_NAME_START_RE = re.compile(f"[{_NAME_START}]")
_NAME_CHAR_RE = re.compile(f"[{_NAME_CHAR}]")

_ATTR = f"({_NAME}){_S}*={_S}*(\"[^<\"]*\"|'[^<']*')"
_START_TAG_RE = re.compile(f"<({_NAME})((?:{_S}+{_ATTR})*){_S}*(?P<empty>/?)>")
_ATTR_RE = re.compile(f"{_S}+{_ATTR}")
_END_TAG_RE = re.compile(f"</({_NAME}){_S}*>")
_REF_IN_VALUE_RE = re.compile(r"&([^;&]*);?")

PREDEFINED_ENTITIES = {"lt": "<", "gt": ">", "amp": "&", "apos": "'", "quot": '"'}

# longest legal reference is well under this; anything longer is garbage
_MAX_REF_LEN = 32


class TokenKind(str, Enum):
    AF = "AFToken"
    RF = "RFToken"
    SCF = "SCFToken"
    CHAR = "FChar"
    REF = "FRef"


@dataclass(frozen=True)
class FunctionToken:
    kind: TokenKind
    name: str | None = None
    params: tuple[tuple[str, str], ...] = ()
    text: str | None = None
    span: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.name is not None:
            d["name"] = self.name
        if self.kind in (TokenKind.AF, TokenKind.SCF):
            d["params"] = [list(p) for p in self.params]
        if self.text is not None:
            d["text"] = self.text
        d["span"] = list(self.span)
        return d


@dataclass(frozen=True)
class StreamChunk:
    text: str
    seq: int
    t_ms: float | None = None


ParseEvent = Union[FunctionToken, ParseError]


def _is_xml_char(cp: int) -> bool:
    return (
        cp in (0x9, 0xA, 0xD)
        or 0x20 <= cp <= 0xD7FF
        or 0xE000 <= cp <= 0xFFFD
        or 0x10000 <= cp <= 0x10FFFF
    )


def decode_reference(ref_text: str, offset: int | None = None) -> str:
    """Decode ``&name;``, ``&#digits;`` or ``&#xhex;`` to its character."""
    if len(ref_text) < 3 or ref_text[0] != "&" or ref_text[-1] != ";":
        raise BadReference(f"malformed reference {ref_text!r}", offset)
    body = ref_text[1:-1]
    if body.startswith("#"):
        if body.startswith("#x"):
            digits, base = body[2:], 16
            ok = bool(digits) and all(c in "0123456789abcdefABCDEF" for c in digits)
        else:
            digits, base = body[1:], 10
            ok = bool(digits) and all(c in "0123456789" for c in digits)
        if not ok:
            raise BadReference(f"malformed character reference {ref_text!r}", offset)
        cp = int(digits, base)
        if not _is_xml_char(cp):
            raise BadReference(f"code point {cp:#x} is not a legal XML character", offset)
        return chr(cp)
    try:
        return PREDEFINED_ENTITIES[body]
    except KeyError:
        raise BadReference(f"undefined entity {ref_text!r}", offset) from None


def _decode_value(raw: str, offset: int) -> str:
    if "&" not in raw:
        return raw

    def sub(m: re.Match) -> str:
        ref = m.group(0)
        if not ref.endswith(";"):
            raise BadReference(f"unterminated reference in attribute value {ref!r}", offset)
        return decode_reference(ref, offset)

    return _REF_IN_VALUE_RE.sub(sub, raw)


class StreamParser:
    """Push parser turning chunked text into :class:`FunctionToken` events.

    Character data is emitted per maximal run, so the output never depends
    on where chunk boundaries fall. With ``merge_refs`` set, decoded
    references are folded into the surrounding FChar run instead of being
    emitted as separate FRef tokens.
    """

    def __init__(self, merge_refs: bool = False):
        self.merge_refs = merge_refs
        self._buf = ""
        self._pos = 0  # cursor into _buf
        self._base = 0  # stream offset of _buf[0]
        self._next_seq = 0
        self._state = "open"
        # pending character run
        self._run: list[str] = []
        self._run_start: int | None = None
        self._lit_tail = ""  # last raw chars of the current literal segment, for ']]>'
        # resumable scan of an incomplete tag
        self._scan = 1
        self._quote: str | None = None

    @property
    def finished(self) -> bool:
        return self._state != "open"

    @property
    def failed(self) -> bool:
        return self._state == "failed"

    @property
    def offset(self) -> int:
        """Stream offset of the first character not yet consumed."""
        return self._base + self._pos

    def feed(self, chunk: StreamChunk | str) -> list[ParseEvent]:
        if self._state != "open":
            raise ParserStateError(f"parser is {self._state}")
        if isinstance(chunk, StreamChunk):
            if chunk.seq != self._next_seq:
                raise ParserStateError(
                    f"expected chunk seq {self._next_seq}, got {chunk.seq}"
                )
            text = chunk.text
        else:
            text = chunk
        self._next_seq += 1
        if not text:
            return []
        self._buf += text
        return self._drain()

    def finish(self) -> list[ParseEvent]:
        if self._state != "open":
            raise ParserStateError(f"parser is {self._state}")
        events: list[ParseEvent] = []
        rest = self._buf[self._pos :]
        if rest:
            at = self.offset
            if rest[0] == "<":
                if self._quote is not None:
                    err: ParseError = MalformedTag("unterminated quoted value", at)
                else:
                    err = UnterminatedToken(f"stream ended inside tag {rest[:40]!r}", at)
            else:
                err = BadReference(f"stream ended inside reference {rest!r}", at)
            return self._fail(err)
        self._flush_run(events)
        self._state = "finished"
        return events

    # -- internals ---------------------------------------------------------

    def _fail(self, err: ParseError) -> list[ParseEvent]:
        self._state = "failed"
        return [err]

    def _flush_run(self, out: list[ParseEvent]) -> None:
        if self._run_start is not None:
            out.append(
                FunctionToken(
                    TokenKind.CHAR, text="".join(self._run), span=(self._run_start, self.offset)
                )
            )
        self._run = []
        self._run_start = None
        self._lit_tail = ""

    def _drain(self) -> list[ParseEvent]:
        out: list[ParseEvent] = []
        buf = self._buf
        try:
            while self._pos < len(buf):
                pos = self._pos
                c = buf[pos]
                if c == "<":
                    end = self._find_tag_end()
                    if end is None:
                        break
                    self._flush_run(out)
                    out.append(self._parse_tag(buf[pos : end + 1], self.offset))
                    self._pos = end + 1
                    self._scan, self._quote = 1, None
                elif c == "&":
                    end = self._find_ref_end()
                    if end is None:
                        break
                    start = self.offset
                    decoded = decode_reference(buf[pos : end + 1], start)
                    self._lit_tail = ""
                    if self.merge_refs:
                        if self._run_start is None:
                            self._run_start = start
                        self._run.append(decoded)
                        self._pos = end + 1
                    else:
                        self._flush_run(out)
                        self._pos = end + 1
                        out.append(FunctionToken(TokenKind.REF, text=decoded, span=(start, self.offset)))
                else:
                    stops = [i for i in (buf.find("<", pos), buf.find("&", pos)) if i >= 0]
                    n = min(stops) if stops else len(buf)
                    piece = buf[pos:n]
                    window = self._lit_tail + piece
                    bad = window.find("]]>")
                    if bad >= 0:
                        raise ForbiddenSequence(
                            "']]>' is not allowed in character data",
                            self.offset - len(self._lit_tail) + bad,
                        )
                    self._lit_tail = window[-2:]
                    if self._run_start is None:
                        self._run_start = self.offset
                    self._run.append(piece)
                    self._pos = n
        except ParseError as err:
            out.extend(self._fail(err))
        # compact: drop consumed text
        self._base += self._pos
        self._buf = buf[self._pos :]
        self._pos = 0
        return out

    def _find_tag_end(self) -> int | None:
        """Index in ``_buf`` of the '>' closing the tag at ``_pos``, or None."""
        buf, start = self._buf, self._pos
        i = start + self._scan
        quote = self._quote
        n = len(buf)
        at = self._base
        while i < n:
            c = buf[i]
            rel = i - start
            if quote is not None:
                if c == quote:
                    quote = None
                elif c == "<":
                    raise MalformedTag("'<' inside a parameter value", at + i)
            elif rel == 1:
                if c in "!?":
                    raise ForbiddenSequence(
                        f"'<{c}' (comments, declarations, processing instructions) is not allowed",
                        at + start,
                    )
                if c != "/" and not _NAME_START_RE.match(c):
                    raise MalformedTag(f"invalid name start {c!r}", at + i)
            elif rel == 2 and buf[start + 1] == "/" and not _NAME_START_RE.match(c):
                raise MalformedTag(f"invalid name start {c!r}", at + i)
            elif c in "\"'":
                quote = c
            elif c == "<":
                raise MalformedTag("'<' inside a tag", at + i)
            elif c == ">":
                return i
            i += 1
        self._scan, self._quote = i - start, quote
        return None

    def _find_ref_end(self) -> int | None:
        buf, start = self._buf, self._pos
        limit = min(len(buf), start + _MAX_REF_LEN)
        for i in range(start + 1, limit):
            c = buf[i]
            if c == ";":
                return i
            if not (c == "#" or _NAME_CHAR_RE.match(c)):
                raise BadReference(f"malformed reference {buf[start : i + 1]!r}", self.offset)
        if len(buf) - start >= _MAX_REF_LEN:
            raise BadReference(f"reference too long {buf[start:limit]!r}", self.offset)
        return None

    def _parse_tag(self, raw: str, offset: int) -> FunctionToken:
        span = (offset, offset + len(raw))
        if raw.startswith("</"):
            m = _END_TAG_RE.fullmatch(raw)
            if m is None:
                raise MalformedTag(f"malformed reset token {raw!r}", offset)
            return FunctionToken(TokenKind.RF, name=m.group(1), span=span)
        m = _START_TAG_RE.fullmatch(raw)
        if m is None:
            raise MalformedTag(f"malformed tag {raw!r}", offset)
        params: list[tuple[str, str]] = []
        seen: set[str] = set()
        for am in _ATTR_RE.finditer(m.group(2)):
            key = am.group(1)
            if key in seen:
                raise MalformedTag(f"duplicate parameter {key!r}", offset)
            seen.add(key)
            params.append((key, _decode_value(am.group(2)[1:-1], offset)))
        kind = TokenKind.SCF if m.group("empty") else TokenKind.AF
        return FunctionToken(kind, name=m.group(1), params=tuple(params), span=span)


def parse_events(chunks: Iterable[str], merge_refs: bool = False) -> list[ParseEvent]:
    """Run a fresh parser over ``chunks`` and return every event, finish included."""
    p = StreamParser(merge_refs=merge_refs)
    events: list[ParseEvent] = []
    for text in chunks:
        events.extend(p.feed(text))
        if p.failed:
            return events
    events.extend(p.finish())
    return events


def parse(text: str, merge_refs: bool = False) -> list[FunctionToken]:
    """Parse a complete string, raising the first error."""
    events = parse_events([text], merge_refs=merge_refs)
    if events and isinstance(events[-1], ParseError):
        raise events[-1]
    return events  # type: ignore[return-value]
