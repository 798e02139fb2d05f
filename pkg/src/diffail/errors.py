"""Shared exception taxonomy.

ConfigError: the caller assembled an invalid configuration (bad dims, bad
ranges, incompatible dataset/env). UsageError: a call that is valid in some
state was made in the wrong one (empty buffer, non-scalar loss). Both map to
CLI exit code 1. InternalError and TrainingAborted signal bugs or blown-up
runs and map to exit code 2.
"""


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


class InternalError(RuntimeError):
    pass


class TrainingAborted(RuntimeError):
    """Raised when a run hits a non-finite loss or parameter."""

    def __init__(self, step: int, detail: str):
        super().__init__(f"training aborted at step {step}: {detail}")
        self.step = step
        self.detail = detail
