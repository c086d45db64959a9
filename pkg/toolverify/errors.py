# toolverify/errors.py
# Exception hierarchy shared by every module.
# Validation errors also subclass ValueError so callers can treat them as bad input.


class ToolverifyError(Exception):
    """Base exception for all toolverify errors."""


# -- backend -----------------------------------------------------------------

class BackendError(ToolverifyError):
    """Base exception for generation backend errors."""


class RequestError(BackendError, ValueError):
    """Raised when a GenerationRequest violates its invariants."""


class TransportError(BackendError):
    """Raised when the endpoint cannot be reached (retried)."""

    def __init__(self, message: str, status_code: int | None = None):
        self.status_code = status_code
        super().__init__(message)


class ProtocolError(BackendError):
    """Raised when the endpoint answers with a malformed body (not retried)."""


class UnmatchedScriptError(BackendError):
    """Raised when no scripted rule matches a prompt (a fixture gap)."""

    def __init__(self, tag: str, prompt: str):
        self.tag = tag
        self.prompt = prompt
        excerpt = prompt[-160:].replace("\n", "\\n")
        super().__init__(f"No scripted rule matches stage '{tag}' prompt ending: ...{excerpt}")


# -- similarity ----------------------------------------------------------------

class SimilarityError(ToolverifyError, ValueError):
    """Raised on dimension mismatch between embedding vectors."""


# -- registry --------------------------------------------------------------------

class RegistryError(ToolverifyError, ValueError):
    """Base exception for registry errors."""


class RegistryLoadError(RegistryError):
    """Raised when a registry file fails to parse or validate."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class CandidateSetError(RegistryError):
    """Raised when a candidate set cannot be built."""


# -- prompts ----------------------------------------------------------------------

class PromptError(ToolverifyError, ValueError):
    """Base exception for prompt rendering errors."""


class UnknownStageError(PromptError):
    """Raised when no template exists for a stage."""


class UnboundPlaceholderError(PromptError):
    """Raised when a template placeholder has no binding."""

    def __init__(self, stage: str, placeholder: str):
        self.stage = stage
        self.placeholder = placeholder
        super().__init__(f"Template '{stage}' has no binding for placeholder '{placeholder}'")


# -- datagen ----------------------------------------------------------------------

class DatagenError(ToolverifyError):
    """Base exception for dataset generation errors."""


class RelatedToolError(DatagenError):
    """Raised when related-tool generation keeps producing duplicates."""


class InstructionGenerationError(DatagenError):
    """Raised when the resample bound is exceeded before n instructions are collected."""

    def __init__(self, message: str, collected: list[str] | None = None):
        self.collected = list(collected or [])
        super().__init__(message)


# -- selector ---------------------------------------------------------------------

class SelectionError(ToolverifyError):
    """Base exception for tool selection errors."""


class UnparseableSelectionError(SelectionError):
    """Raised when a reply names no tool."""


class OutOfSetSelectionError(SelectionError):
    """Raised when a reply names a tool outside the candidate set."""

    def __init__(self, name: str, candidates: list[str]):
        self.name = name
        self.candidates = list(candidates)
        super().__init__(f"Selected tool '{name}' is not a candidate: {self.candidates}")


class CacheError(ToolverifyError, ValueError):
    """Raised when the verification-question cache file is corrupt."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# -- paramgen ---------------------------------------------------------------------

class ParamError(ToolverifyError):
    """Base exception for parameter generation errors."""


class ParamGenerationError(ParamError):
    """Raised when a parameter reply is wholly unparseable."""


class VerificationParseError(ParamError):
    """Raised when a verification reply picks none of a, b or None."""


class ConstructionError(ParamError):
    """Raised when no tool call can be constructed."""


# -- eval -------------------------------------------------------------------------

class CallParseError(ToolverifyError, ValueError):
    """Raised when a string is not a recognizable tool call."""

    def __init__(self, message: str, position: int = 0):
        self.position = position
        super().__init__(f"{message} (at position {position})")


class LiveExecutionError(ToolverifyError):
    """Raised when a live call cannot be executed; status is set for HTTP error replies."""

    def __init__(self, message: str, status: int | None = None):
        self.status = status
        super().__init__(message)


# -- cli --------------------------------------------------------------------------

class ConfigError(ToolverifyError, ValueError):
    """Raised when the run configuration is invalid at startup."""
