"""Element forest assembly on top of the token stream.

Each token updates a stack of open spanning elements. Elements compare
structurally: spans, lifecycle state and parent links are provenance and
do not take part in equality.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

from .errors import DepthExceeded, NameMismatch, StrayClose, UnclosedElement
from .tokens import FunctionToken, TokenKind

__all__ = [
    "ElementForm",
    "ElementState",
    "Element",
    "ElementEventKind",
    "ElementEvent",
    "ElementBuilder",
    "serialize",
    "serialize_forest",
    "escape_text",
    "escape_value",
    "build_forest",
]

DEFAULT_MAX_DEPTH = 64

_ids = itertools.count()


class ElementForm(str, Enum):
    SPANNING = "Spanning"
    SELF_CONTAINED = "SelfContained"
    CHARACTER_RUN = "CharacterRun"


class ElementState(str, Enum):
    INITIAL = "Initial"
    ACTIVE = "Active"
    COMPLETED = "Completed"


_ALLOWED = {
    ElementState.INITIAL: {ElementState.ACTIVE},
    ElementState.ACTIVE: {ElementState.INITIAL, ElementState.COMPLETED},
    ElementState.COMPLETED: set(),
}


@dataclass
class Element:
    form: ElementForm
    name: str | None = None
    params: tuple[tuple[str, str], ...] = ()
    children: list[Element] = field(default_factory=list)
    text: str | None = None
    state: ElementState = field(default=ElementState.INITIAL, compare=False)
    open_span: tuple[int, int] | None = field(default=None, compare=False)
    close_span: tuple[int, int] | None = field(default=None, compare=False)
    parent: Element | None = field(default=None, compare=False, repr=False)
    from_ref: bool = field(default=False, compare=False, repr=False)
    uid: int = field(default_factory=lambda: next(_ids), compare=False, repr=False)

    @classmethod
    def spanning(cls, name: str, params=(), children=()) -> Element:
        el = cls(ElementForm.SPANNING, name, tuple(params), list(children))
        for c in el.children:
            c.parent = el
        return el

    @classmethod
    def self_contained(cls, name: str, params=()) -> Element:
        return cls(ElementForm.SELF_CONTAINED, name, tuple(params))

    @classmethod
    def character_run(cls, text: str) -> Element:
        return cls(ElementForm.CHARACTER_RUN, text=text)

    def transition(self, new: ElementState) -> None:
        if new not in _ALLOWED[self.state]:
            raise ValueError(f"illegal lifecycle transition {self.state.value} -> {new.value}")
        self.state = new

    def ancestors(self):
        p = self.parent
        while p is not None:
            yield p
            p = p.parent

    @property
    def depth(self) -> int:
        return sum(1 for _ in self.ancestors())


class ElementEventKind(str, Enum):
    OPENED = "Opened"
    CLOSED = "Closed"
    TEXT_ARRIVED = "TextArrived"


@dataclass(frozen=True)
class ElementEvent:
    kind: ElementEventKind
    element: Element
    offset: int


class ElementBuilder:
    """Feeds tokens into a forest, enforcing strict nesting."""

    def __init__(self, max_depth: int = DEFAULT_MAX_DEPTH):
        self.max_depth = max_depth
        self.forest: list[Element] = []
        self._stack: list[Element] = []

    @property
    def depth(self) -> int:
        return len(self._stack)

    @property
    def innermost(self) -> Element | None:
        return self._stack[-1] if self._stack else None

    def _attach(self, el: Element) -> None:
        if self._stack:
            el.parent = self._stack[-1]
            self._stack[-1].children.append(el)
        else:
            self.forest.append(el)

    def apply_token(self, token: FunctionToken) -> list[ElementEvent]:
        start = token.span[0]
        kind = token.kind
        if kind is TokenKind.AF:
            if len(self._stack) >= self.max_depth:
                raise DepthExceeded(f"nesting deeper than {self.max_depth}", start)
            el = Element(ElementForm.SPANNING, token.name, token.params, open_span=token.span)
            self._attach(el)
            el.transition(ElementState.ACTIVE)
            self._stack.append(el)
            return [ElementEvent(ElementEventKind.OPENED, el, start)]
        if kind is TokenKind.RF:
            if not self._stack:
                raise StrayClose(f"</{token.name}> with no open element", start)
            top = self._stack[-1]
            if top.name != token.name:
                raise NameMismatch(f"</{token.name}> closes <{top.name}>", start)
            self._stack.pop()
            top.close_span = token.span
            top.transition(ElementState.COMPLETED)
            return [ElementEvent(ElementEventKind.CLOSED, top, start)]
        if kind is TokenKind.SCF:
            el = Element(ElementForm.SELF_CONTAINED, token.name, token.params, open_span=token.span)
            self._attach(el)
            el.transition(ElementState.ACTIVE)
            el.transition(ElementState.COMPLETED)
            return [
                ElementEvent(ElementEventKind.OPENED, el, start),
                ElementEvent(ElementEventKind.CLOSED, el, start),
            ]
        el = Element(
            ElementForm.CHARACTER_RUN,
            text=token.text,
            open_span=token.span,
            from_ref=kind is TokenKind.REF,
        )
        self._attach(el)
        el.state = ElementState.COMPLETED
        return [ElementEvent(ElementEventKind.TEXT_ARRIVED, el, start)]

    def finish(self, offset: int | None = None) -> None:
        """Raise if elements are still open at end of stream."""
        if self._stack:
            names = ", ".join(f"<{e.name}>" for e in self._stack)
            raise UnclosedElement(f"stream ended with open elements {names}", offset)


def escape_text(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def escape_value(text: str) -> str:
    return escape_text(text).replace('"', "&quot;")


def _attrs(params) -> str:
    return "".join(f' {k}="{escape_value(v)}"' for k, v in params)


def serialize(element: Element) -> str:
    if element.form is ElementForm.CHARACTER_RUN:
        return escape_text(element.text or "")
    if element.form is ElementForm.SELF_CONTAINED:
        return f"<{element.name}{_attrs(element.params)}/>"
    inner = "".join(serialize(c) for c in element.children)
    return f"<{element.name}{_attrs(element.params)}>{inner}</{element.name}>"


def serialize_forest(forest) -> str:
    return "".join(serialize(e) for e in forest)


def build_forest(tokens, max_depth: int = DEFAULT_MAX_DEPTH) -> list[Element]:
    """Assemble a complete token list into a forest, merging nothing."""
    b = ElementBuilder(max_depth=max_depth)
    for t in tokens:
        b.apply_token(t)
    b.finish()
    return b.forest
