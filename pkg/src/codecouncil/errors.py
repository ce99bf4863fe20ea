"""Exception hierarchy shared across the package."""


class CodeCouncilError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigError(CodeCouncilError):
    """Invalid pipeline configuration."""


class InvalidAblation(ConfigError):
    """Reviewer enabled without a debugger to consume its analysis."""


class BackendError(CodeCouncilError):
    """Base class for completion-backend failures."""


class NetworkError(BackendError):
    """Transport-level failure that survived every retry."""


class ProtocolError(BackendError):
    """The endpoint answered, but the response body is unusable."""


class ScriptExhausted(BackendError):
    """The scripted backend has no entry left to serve."""


class ScriptMismatch(BackendError):
    """The next scripted entry is tagged for a different pipeline stage."""


class ParseFailure(CodeCouncilError):
    """A structured response could not be parsed into the expected fields."""


class EmptyCompletion(CodeCouncilError):
    """A completion that was expected to carry content is blank."""


class PromptError(CodeCouncilError):
    """A prompt renderer precondition was violated or a template is unusable."""


class EmptyInput(CodeCouncilError):
    """An aggregate over zero records was requested."""


class SandboxFailure(CodeCouncilError):
    """The execution environment itself failed, not the candidate program."""


class DatasetError(CodeCouncilError):
    """Base class for dataset ingestion problems."""


class MalformedRecord(DatasetError):
    """A dataset line is not a usable record."""


class MissingField(DatasetError):
    """A dataset record lacks a required field."""


class EmptyDataset(DatasetError):
    """Refusing to evaluate zero problems; an empty dataset is almost always a path typo."""
