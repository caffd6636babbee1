"""Exception types shared across the package."""

from __future__ import annotations


class MragError(Exception):
    """Base class for every error raised by this package."""


# --- plan grammar ---------------------------------------------------------


class ParseError(MragError):
    """Planner output did not contain a usable plan."""


class UnknownTool(ParseError):
    def __init__(self, name: str):
        super().__init__(f"unknown tool name: {name!r}")
        self.name = name


class UnknownProfile(MragError):
    def __init__(self, profile: str):
        super().__init__(f"unknown validation profile: {profile!r}")
        self.profile = profile


class InvalidPlan(MragError):
    """Plan failed strict validation where a valid plan was required."""


# --- toolkit / backends ---------------------------------------------------


class BackendMissing(MragError):
    def __init__(self, kind):
        super().__init__(f"no backend registered for {kind}")
        self.kind = kind


class ToolFailure(MragError):
    """A tool backend failed; wraps the transport or endpoint cause."""

    def __init__(self, kind, cause):
        super().__init__(f"{getattr(kind, 'value', kind)} failed: {cause}")
        self.kind = kind
        self.cause = cause


class InvalidArgs(MragError):
    """Arguments do not conform to the tool schema."""


class ConfigError(MragError):
    """Required configuration (typically environment variables) is missing."""


# --- planner --------------------------------------------------------------


class PlannerFailure(MragError):
    """The planner endpoint itself errored."""


class PlanUnparseable(MragError):
    """Planner output stayed unusable after all repair attempts."""


class MissingGoldPlan(MragError):
    pass


# --- executor -------------------------------------------------------------


class WiringError(MragError):
    """A value reference could not be resolved at execution time."""


class TypeMismatch(WiringError):
    """A resolved payload does not fit the slot's semantic type."""


# --- evaluation -----------------------------------------------------------


class EmptyInput(MragError):
    pass


class LengthMismatch(MragError):
    pass


class JudgeFailure(MragError):
    pass


class ScoreUnparseable(MragError):
    pass


class EmbedderFailure(MragError):
    pass


class KeyMismatch(MragError):
    pass


# --- dataset --------------------------------------------------------------


class DatasetError(MragError):
    pass


class SchemaError(DatasetError):
    def __init__(self, line: int, field: str, message: str):
        super().__init__(f"line {line}: field {field!r}: {message}")
        self.line = line
        self.field = field


class DuplicateId(DatasetError):
    def __init__(self, line: int, instance_id: str):
        super().__init__(f"line {line}: duplicate id {instance_id!r}")
        self.line = line
        self.instance_id = instance_id


class ArchetypeMismatch(DatasetError):
    def __init__(self, line: int, declared: int, derived: int):
        super().__init__(
            f"line {line}: declared type {declared} but gold plan implies type {derived}"
        )
        self.line = line
        self.declared = declared
        self.derived = derived


class DatasetLoadError(DatasetError):
    """Aggregates every per-line error found while loading a dataset file."""

    def __init__(self, errors: list[DatasetError]):
        super().__init__(
            "dataset load failed:\n" + "\n".join(f"  - {e}" for e in errors)
        )
        self.errors = list(errors)


class BadMatrix(DatasetError):
    pass


class NotPSD(BadMatrix):
    pass
