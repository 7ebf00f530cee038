"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class StreamCallError(Exception):
    """Base class for all errors raised by this package."""

    code = "StreamCallError"

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.message = message
        self.offset = offset

    def __str__(self) -> str:
        if self.offset is None:
            return f"{self.code}: {self.message}"
        return f"{self.code} at offset {self.offset}: {self.message}"

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.message == other.message
            and self.offset == other.offset
        )

    def __hash__(self):
        return hash((type(self), self.message, self.offset))


# -- parsing ---------------------------------------------------------------


class ParseError(StreamCallError):
    """Stream text violates the function-token grammar. Terminal."""

    code = "ParseError"


class MalformedTag(ParseError):
    code = "MalformedTag"


class ForbiddenSequence(ParseError):
    code = "ForbiddenSequence"


class BadReference(ParseError):
    code = "BadReference"


class UnterminatedToken(ParseError):
    code = "UnterminatedToken"


class ParserStateError(StreamCallError):
    """feed/finish called on a finished or failed parser, or out of sequence."""

    code = "ParserStateError"


# -- element assembly ------------------------------------------------------


class NameMismatch(ParseError):
    code = "NameMismatch"


class StrayClose(ParseError):
    code = "StrayClose"


class DepthExceeded(ParseError):
    code = "DepthExceeded"


class UnclosedElement(ParseError):
    code = "UnclosedElement"


# -- registry / mapping ----------------------------------------------------


class MappingError(StreamCallError):
    code = "MappingError"


class DuplicateName(MappingError):
    code = "DuplicateName"


class UnknownFunction(MappingError):
    code = "UnknownFunction"


class FormUnsupported(MappingError):
    code = "FormUnsupported"


class MissingRequiredParam(MappingError):
    code = "MissingRequiredParam"


class UnknownParam(MappingError):
    code = "UnknownParam"


class ConversionError(MappingError):
    code = "ConversionError"


class ManifestError(StreamCallError):
    code = "ManifestError"


# -- scheduling ------------------------------------------------------------


class SchedulingError(StreamCallError):
    code = "SchedulingError"


class UnknownChannel(SchedulingError):
    code = "UnknownChannel"


class AlreadyEnqueued(SchedulingError):
    code = "AlreadyEnqueued"


class LifecycleViolation(SchedulingError):
    code = "LifecycleViolation"


# -- sources ---------------------------------------------------------------


class SourceError(StreamCallError):
    code = "SourceError"


class MalformedTraceFile(SourceError):
    code = "MalformedTraceFile"

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConnectFailed(SourceError):
    code = "ConnectFailed"


class StreamAborted(SourceError):
    code = "StreamAborted"


class ProtocolError(SourceError):
    code = "ProtocolError"


# -- scoring ---------------------------------------------------------------


class InvalidCorrectness(StreamCallError, ValueError):
    code = "InvalidCorrectness"


class SpecMismatch(StreamCallError):
    code = "SpecMismatch"


# -- execution -------------------------------------------------------------


class ScenarioError(StreamCallError):
    code = "ScenarioError"


class StalledProgram(StreamCallError):
    code = "StalledProgram"
