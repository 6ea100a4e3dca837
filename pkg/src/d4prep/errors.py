"""Error classes shared by all modules.

Each class carries the process exit code the CLI returns when it escapes.
"""


class ToolkitError(Exception):
    exit_code = 1


class TooSmall(ToolkitError):
    exit_code = 10


class NeedsColoring(ToolkitError):
    exit_code = 11


class NotGridLocal(ToolkitError):
    exit_code = 12


class WrongProtocol(ToolkitError):
    exit_code = 13


class CapacityExceeded(ToolkitError):
    exit_code = 20

    def __init__(self, msg, peak=None):
        super().__init__(msg)
        self.peak = peak


class DeadQubit(ToolkitError):
    exit_code = 21


class ImpossibleOutcome(ToolkitError):
    exit_code = 22


class RegionTooLarge(ToolkitError):
    exit_code = 23


class SupportTooLarge(ToolkitError):
    exit_code = 24


class MissingOutcome(ToolkitError):
    exit_code = 30


class NonIntegerFusion(ToolkitError):
    exit_code = 40


class UnknownGroup(ToolkitError):
    exit_code = 41


class ConfigError(ToolkitError):
    exit_code = 2


EXIT_CODES = {cls.__name__: cls.exit_code for cls in (
    ToolkitError, ConfigError, TooSmall, NeedsColoring, NotGridLocal, WrongProtocol,
    CapacityExceeded, DeadQubit, ImpossibleOutcome, RegionTooLarge, SupportTooLarge,
    MissingOutcome, NonIntegerFusion, UnknownGroup)}
