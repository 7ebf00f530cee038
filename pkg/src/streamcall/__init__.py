"""Streaming function-call runtime.

Parses XML-style function tokens out of a text stream as it arrives, maps
them onto registered functions and runs them across mutually exclusive
channels, on a virtual or wall clock.
"""

from .bcm import PatternSpec, TaskResult, check_pattern, normalized_score, raw_score
from .elements import Element, ElementBuilder, ElementForm, serialize, serialize_forest
from .errors import StreamCallError
from .executor import (
    EventKind,
    ExecutionEvent,
    ExecutionTrace,
    InterruptSpec,
    ScenarioConfig,
    open_program,
    run_program,
)
from .registry import (
    BoundCall,
    ChannelKind,
    ChannelSpec,
    Form,
    FunctionDescriptor,
    ParamSpec,
    Registry,
    load_manifest,
)
from .scheduler import Scheduler, StepKind
from .sources import open_live, open_trace, throttle
from .tokens import FunctionToken, StreamChunk, StreamParser, TokenKind, parse

__all__ = [
    "BoundCall",
    "ChannelKind",
    "ChannelSpec",
    "Element",
    "ElementBuilder",
    "ElementForm",
    "EventKind",
    "ExecutionEvent",
    "ExecutionTrace",
    "Form",
    "FunctionDescriptor",
    "FunctionToken",
    "InterruptSpec",
    "ParamSpec",
    "PatternSpec",
    "Registry",
    "ScenarioConfig",
    "Scheduler",
    "StepKind",
    "StreamCallError",
    "StreamChunk",
    "StreamParser",
    "TaskResult",
    "TokenKind",
    "check_pattern",
    "load_manifest",
    "normalized_score",
    "open_live",
    "open_program",
    "open_trace",
    "parse",
    "raw_score",
    "run_program",
    "serialize",
    "serialize_forest",
    "throttle",
]
