"""Function-interface registry, prompt rendering and element resolution."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from .elements import Element, ElementForm
from .errors import (
    ConversionError,
    DuplicateName,
    FormUnsupported,
    ManifestError,
    MissingRequiredParam,
    UnknownFunction,
    UnknownParam,
)
from .tokens import NAME_RE

__all__ = [
    "Form",
    "ParamSpec",
    "FunctionDescriptor",
    "BoundCall",
    "LifecyclePlan",
    "Registry",
    "ChannelSpec",
    "ChannelKind",
    "convert_param",
    "lifecycle",
    "load_manifest",
]

PARAM_TYPES = ("string", "integer", "float", "boolean", "enum")
DEFAULT_MAX_TEXT_BYTES = 64 * 1024

_INT_RE = re.compile(r"[+-]?[0-9]+")
_FLOAT_RE = re.compile(r"[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?")
_ENUM_TYPE_RE = re.compile(r"enum\((.*)\)")


class Form(str, Enum):
    SPANNING = "Spanning"
    ATOMIC = "Atomic"


class ChannelKind(str, Enum):
    MAIN = "main"
    SUB = "sub"


@dataclass(frozen=True)
class ChannelSpec:
    id: str
    kind: ChannelKind = ChannelKind.SUB


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str
    required: bool = True
    default: Any = None
    choices: tuple[str, ...] = ()

    def __post_init__(self):
        if self.type not in PARAM_TYPES:
            raise ValueError(f"unknown parameter type {self.type!r}")
        if self.type == "enum" and not self.choices:
            raise ValueError(f"enum parameter {self.name!r} needs choices")
        if self.required and self.default is not None:
            raise ValueError(f"required parameter {self.name!r} cannot have a default")
        if not self.required and self.default is None:
            raise ValueError(f"optional parameter {self.name!r} needs a default")

    @property
    def annotation(self) -> str:
        if self.type == "enum":
            return "Literal[" + ", ".join(json.dumps(c) for c in self.choices) + "]"
        return {"string": "str", "integer": "int", "float": "float", "boolean": "bool"}[self.type]


@dataclass(frozen=True)
class FunctionDescriptor:
    name: str
    params: tuple[ParamSpec, ...] = ()
    doc: str = ""
    default_channel: str = "main"
    forms: frozenset[Form] = frozenset({Form.ATOMIC})
    accepts_text_content: bool = False
    simulated_duration_ms: float = 0
    returns: str = "None"

    def __post_init__(self):
        if not NAME_RE.fullmatch(self.name):
            raise ValueError(f"{self.name!r} is not a valid function name")
        if not self.forms:
            raise ValueError(f"{self.name}: forms must be non-empty")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.name}: duplicate parameter names")
        if self.accepts_text_content and self.text_param is None:
            raise ValueError(f"{self.name}: accepts_text_content needs a string parameter")

    @property
    def text_param(self) -> ParamSpec | None:
        """The first string parameter; receives nested character data."""
        return next((p for p in self.params if p.type == "string"), None)

    def param(self, name: str) -> ParamSpec | None:
        return next((p for p in self.params if p.name == name), None)

    def signature(self) -> str:
        parts = []
        for p in self.params:
            s = f"{p.name}: {p.annotation}"
            if not p.required:
                s += f" = {json.dumps(p.default)}"
            parts.append(s)
        return f"{self.name}({', '.join(parts)}) -> {self.returns}"


@dataclass(eq=False)
class BoundCall:
    """A resolved call: descriptor plus converted arguments."""

    function: FunctionDescriptor
    args: tuple
    form_used: Form
    channel: str
    source_element: Element | None = None
    is_text: bool = False
    warnings: tuple[str, ...] = ()
    # scheduling bookkeeping, filled in by the scheduler/runtime
    parent: BoundCall | None = field(default=None, repr=False)
    index: int | None = field(default=None, repr=False)

    @property
    def name(self) -> str:
        return self.function.name

    @property
    def kwargs(self) -> dict[str, Any]:
        return {p.name: a for p, a in zip(self.function.params, self.args)}

    def _key(self):
        return (self.function, self.args, self.form_used, self.channel, self.is_text, self.source_element)

    def __eq__(self, other):
        if not isinstance(other, BoundCall):
            return NotImplemented
        return self._key() == other._key()

    def is_descendant_of(self, other: BoundCall) -> bool:
        p = self.parent
        while p is not None:
            if p is other:
                return True
            p = p.parent
        return False


@dataclass(frozen=True)
class LifecyclePlan:
    """Ordered state transitions for one call.

    ``reset_after_children`` means the reset waits for both the RFToken and
    the completion of every child call.
    """

    form: Form
    steps: tuple[str, ...]
    transitions: tuple[tuple[str, str, str], ...]
    reset_after_children: bool = False


_SPANNING_PLAN = LifecyclePlan(
    Form.SPANNING,
    ("activate", "reset"),
    (("Initial", "Active", "activate"), ("Active", "Active", "execute children"), ("Active", "Initial", "reset")),
    reset_after_children=True,
)
_ATOMIC_PLAN = LifecyclePlan(
    Form.ATOMIC,
    ("invoke",),
    (("Initial", "Active", "call"), ("Active", "Initial", "complete")),
)


def lifecycle(call: BoundCall) -> LifecyclePlan:
    return _SPANNING_PLAN if call.form_used is Form.SPANNING else _ATOMIC_PLAN


def convert_param(raw: str, spec: ParamSpec, span: tuple[int, int] | None = None):
    """Convert a decoded parameter string to ``spec``'s type."""
    offset = span[0] if span else None
    t = spec.type
    if t == "string":
        return raw
    if t == "integer":
        if _INT_RE.fullmatch(raw):
            return int(raw)
    elif t == "float":
        if _FLOAT_RE.fullmatch(raw):
            return float(raw)
    elif t == "boolean":
        if raw in ("true", "false"):
            return raw == "true"
    elif raw in spec.choices:
        return raw
    raise ConversionError(f"parameter {spec.name!r}: cannot convert {raw!r} to {t}", offset)


def _check_value(spec: ParamSpec, value):
    """Validate a default from a manifest or constructor against its type."""
    ok = {
        "string": lambda v: isinstance(v, str),
        "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "boolean": lambda v: isinstance(v, bool),
        "enum": lambda v: v in spec.choices,
    }[spec.type]
    if not ok(value):
        raise ValueError(f"default {value!r} does not match type {spec.type} of {spec.name!r}")
    return float(value) if spec.type == "float" else value


class Registry:
    """Injectable interface registry.

    Abstract descriptors are what the model sees; implementations are bound
    at registration and invoked by the executor. ``text_function`` names the
    function receiving free character data, ``wait_function`` names the
    spanning construct that is always pinned to the main channel.
    """

    def __init__(
        self,
        channels: list[ChannelSpec] | None = None,
        text_function: str = "say",
        wait_function: str | None = "wait",
        strict: bool = True,
        ignore_blank_text: bool = True,
        max_text_bytes: int = DEFAULT_MAX_TEXT_BYTES,
    ):
        self.channels = list(channels) if channels else [ChannelSpec("main", ChannelKind.MAIN)]
        self.text_function = text_function
        self.wait_function = wait_function
        self.strict = strict
        self.ignore_blank_text = ignore_blank_text
        self.max_text_bytes = max_text_bytes
        self._descriptors: dict[str, FunctionDescriptor] = {}
        self._impls: dict[str, Callable] = {}
        self._reset_impls: dict[str, Callable] = {}
        self._reentrant: dict[str, bool] = {}
        self._frozen = False

    # -- build phase -------------------------------------------------------

    def register(
        self,
        descriptor: FunctionDescriptor,
        implementation: Callable | None = None,
        *,
        on_reset: Callable | None = None,
        reentrant: bool = False,
    ) -> None:
        if self._frozen:
            raise RuntimeError("registry is frozen")
        if descriptor.name in self._descriptors:
            raise DuplicateName(f"function {descriptor.name!r} already registered")
        self._descriptors[descriptor.name] = descriptor
        self._impls[descriptor.name] = implementation or _noop
        if on_reset is not None:
            self._reset_impls[descriptor.name] = on_reset
        self._reentrant[descriptor.name] = reentrant

    def bind(self, name: str, implementation: Callable, on_reset: Callable | None = None) -> None:
        """Replace the implementation behind an already-registered interface."""
        if self._frozen:
            raise RuntimeError("registry is frozen")
        if name not in self._descriptors:
            raise UnknownFunction(f"no function named {name!r}")
        self._impls[name] = implementation
        if on_reset is not None:
            self._reset_impls[name] = on_reset

    def freeze(self) -> None:
        self._frozen = True

    # -- lookup ------------------------------------------------------------

    def __contains__(self, name: str) -> bool:
        return name in self._descriptors

    def __len__(self) -> int:
        return len(self._descriptors)

    def descriptor(self, name: str) -> FunctionDescriptor:
        try:
            return self._descriptors[name]
        except KeyError:
            raise UnknownFunction(f"no function named {name!r}") from None

    def descriptors(self) -> list[FunctionDescriptor]:
        return [self._descriptors[k] for k in sorted(self._descriptors)]

    def implementation(self, name: str) -> Callable:
        return self._impls[name]

    def reset_implementation(self, name: str) -> Callable | None:
        return self._reset_impls.get(name)

    def is_reentrant(self, name: str) -> bool:
        return self._reentrant[name]

    @property
    def main_channel(self) -> str:
        return next(c.id for c in self.channels if c.kind is ChannelKind.MAIN)

    # -- prompt ------------------------------------------------------------

    def render_prompt(self) -> str:
        lines = [
            "# Available functions",
            "",
            "Call functions by writing XML function tokens inline with your reply.",
            "Rules:",
            '- <name param="value" .../> invokes an atomic function; it finishes on its own.',
            '- <name param="value">...</name> activates a function; it stays active until',
            "  </name>, and everything nested inside runs while it is active.",
            "- Function names and parameter names follow XML Name rules.",
            "- Parameter values are quoted with ' or \".",
            "- Plain text outside tags is spoken aloud and blocks later calls until finished.",
            "- Write &lt; &gt; &amp; &apos; &quot; for reserved characters.",
            "- Opening and closing names must match exactly; no comments, CDATA or <?...?>.",
        ]
        if self.wait_function and self.wait_function in self._descriptors:
            w = self.wait_function
            lines.append(f"- <{w}>...</{w}> blocks everything after it until all nested calls finish.")
        for d in self.descriptors():
            lines.append("")
            lines.append(d.signature())
            forms = []
            if Form.ATOMIC in d.forms:
                forms.append("atomic")
            if Form.SPANNING in d.forms:
                forms.append("spanning")
            doc = d.doc.strip() or "(undocumented)"
            lines.append('    """' + doc.replace("\n", "\n    ") + '"""')
            lines.append(f"    # forms: {', '.join(forms)}; channel: {d.default_channel}")
            if d.accepts_text_content:
                lines.append(f"    # nested text is passed as {d.text_param.name}")
        return "\n".join(lines) + "\n"

    # -- resolution --------------------------------------------------------

    def resolve(self, element: Element, text: str | None = None) -> BoundCall:
        """Map an element to ``(F, theta)``.

        CharacterRuns resolve to the text function. For a spanning element
        whose descriptor accepts text content, ``text`` carries the buffered
        character data destined for its text parameter.
        """
        if element.form is ElementForm.CHARACTER_RUN:
            return self._resolve_text(element.text or "", element)
        desc = self.descriptor(element.name)
        span = element.open_span
        form = Form.SPANNING if element.form is ElementForm.SPANNING else Form.ATOMIC
        if form not in desc.forms:
            allowed = ", ".join(sorted(f.value for f in desc.forms))
            raise FormUnsupported(
                f"<{desc.name}> used as {form.value}, supports {allowed}", span[0] if span else None
            )
        supplied = dict(element.params)
        warnings = []
        for key in supplied:
            if desc.param(key) is None:
                if self.strict:
                    raise UnknownParam(f"<{desc.name}> has no parameter {key!r}", span[0] if span else None)
                warnings.append(f"dropped unknown parameter {key!r} of <{desc.name}>")
        tp = desc.text_param if desc.accepts_text_content else None
        args = []
        for p in desc.params:
            if tp is not None and p is tp and text is not None and p.name not in supplied:
                self._check_text_len(text, span)
                args.append(text)
            elif p.name in supplied:
                args.append(convert_param(supplied[p.name], p, span))
            elif not p.required:
                args.append(p.default)
            else:
                raise MissingRequiredParam(
                    f"<{desc.name}> missing required parameter {p.name!r}", span[0] if span else None
                )
        return BoundCall(desc, tuple(args), form, desc.default_channel, element, warnings=tuple(warnings))

    def _check_text_len(self, text: str, span) -> None:
        if len(text.encode("utf-8")) > self.max_text_bytes:
            raise ConversionError(
                f"text content exceeds {self.max_text_bytes} bytes", span[0] if span else None
            )

    def _resolve_text(self, text: str, element: Element | None) -> BoundCall:
        desc = self.descriptor(self.text_function)
        tp = desc.text_param
        if tp is None:
            raise FormUnsupported(f"text function {desc.name!r} has no string parameter")
        self._check_text_len(text, element.open_span if element else None)
        args = []
        for p in desc.params:
            if p is tp:
                args.append(text)
            elif not p.required:
                args.append(p.default)
            else:
                raise MissingRequiredParam(f"text function {desc.name!r} requires {p.name!r}")
        return BoundCall(desc, tuple(args), Form.ATOMIC, self.main_channel, element, is_text=True)

    def text_call(self, text: str) -> BoundCall:
        """Resolve free text without a source element."""
        return self._resolve_text(text, None)


def _noop(*args, **kwargs):
    return None


# -- manifest ----------------------------------------------------------------

_FUNCTION_FIELDS = {
    "name",
    "params",
    "doc",
    "default_channel",
    "forms",
    "accepts_text_content",
    "simulated_duration_ms",
}


def _param_from_json(obj: dict, where: str) -> ParamSpec:
    missing = {"name", "type", "required"} - obj.keys()
    if missing:
        raise ManifestError(f"{where}: parameter missing {sorted(missing)}")
    raw_type = obj["type"]
    choices: tuple[str, ...] = ()
    m = _ENUM_TYPE_RE.fullmatch(raw_type)
    if m:
        raw_type = "enum"
        choices = tuple(c.strip() for c in m.group(1).split(",") if c.strip())
    try:
        spec = ParamSpec(obj["name"], raw_type, bool(obj["required"]), obj.get("default"), choices)
        if spec.default is not None:
            spec = ParamSpec(spec.name, spec.type, spec.required, _check_value(spec, spec.default), choices)
    except ValueError as e:
        raise ManifestError(f"{where}: {e}") from None
    return spec


def descriptor_from_json(obj: dict) -> FunctionDescriptor:
    missing = _FUNCTION_FIELDS - obj.keys() - {"returns"}
    if missing:
        raise ManifestError(f"function {obj.get('name')!r} missing fields {sorted(missing)}")
    name = obj["name"]
    params = tuple(_param_from_json(p, f"function {name!r}") for p in obj["params"])
    try:
        forms = frozenset(Form(f.capitalize()) for f in obj["forms"])
        return FunctionDescriptor(
            name=name,
            params=params,
            doc=obj["doc"],
            default_channel=obj["default_channel"],
            forms=forms,
            accepts_text_content=bool(obj["accepts_text_content"]),
            simulated_duration_ms=obj["simulated_duration_ms"],
            returns=obj.get("returns", "None"),
        )
    except ValueError as e:
        raise ManifestError(f"function {name!r}: {e}") from None


def load_manifest(path: str | Path, implementations: dict[str, Callable] | None = None) -> Registry:
    """Build a registry from a JSON manifest.

    Layout::

        {"channels": [{"id": "main", "kind": "main"}, {"id": "body", "kind": "sub"}],
         "text_function": "say",
         "wait_function": "wait",
         "functions": [{"name": ..., "params": [...], "doc": ..., "default_channel": ...,
                        "forms": ["atomic"], "accepts_text_content": false,
                        "simulated_duration_ms": 0}]}
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from None
    return registry_from_dict(data, implementations)


def registry_from_dict(data: dict, implementations: dict[str, Callable] | None = None) -> Registry:
    if not isinstance(data, dict):
        raise ManifestError("manifest must be a JSON object")
    try:
        return _registry_from_dict(data, implementations or {})
    except (KeyError, TypeError, AttributeError) as e:
        raise ManifestError(f"malformed manifest: {type(e).__name__}: {e}") from None


def _registry_from_dict(data: dict, implementations: dict[str, Callable]) -> Registry:
    channels = [
        ChannelSpec(c["id"], ChannelKind(c.get("kind", "sub"))) for c in data.get("channels", [])
    ] or None
    if channels and sum(c.kind is ChannelKind.MAIN for c in channels) != 1:
        raise ManifestError("exactly one main channel is required")
    reg = Registry(
        channels=channels,
        text_function=data.get("text_function", "say"),
        wait_function=data.get("wait_function", "wait"),
        strict=data.get("strict", True),
    )
    known = {c.id for c in reg.channels}
    for obj in data.get("functions", []):
        d = descriptor_from_json(obj)
        if d.default_channel not in known:
            raise ManifestError(f"function {d.name!r} uses undeclared channel {d.default_channel!r}")
        reg.register(d, implementations.get(d.name))
    return reg
