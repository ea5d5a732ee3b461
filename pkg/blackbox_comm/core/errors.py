"""Exception taxonomy shared by the services and the CLI.

Every error carries the process exit code the CLI reports for it.
"""

from typing import List, Optional, Tuple


class BlackBoxCommError(Exception):
    """Base class for all workbench errors (internal errors exit with 1)."""

    exit_code = 1


class InvalidArgumentError(BlackBoxCommError, ValueError):
    """An argument violates an operation's precondition."""

    exit_code = 3


class InfeasibleDistortionError(BlackBoxCommError):
    """The requested distortion is below the smallest achievable one."""

    exit_code = 3

    def __init__(self, distortion: float, d_min: float):
        self.distortion = distortion
        self.d_min = d_min
        super().__init__(f"distortion {distortion:.6g} is below d_min = {d_min:.6g}")


class PreconditionError(BlackBoxCommError):
    """A rate or ordering precondition of an experiment does not hold."""

    exit_code = 3


class CertificationError(BlackBoxCommError):
    """A layered construction was requested over an uncertified channel."""

    exit_code = 3


class ResourceLimitError(BlackBoxCommError):
    """A codebook or dynamic-programming table would exceed its memory guard."""

    exit_code = 4

    def __init__(self, what: str, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(f"{what} needs {required} cells, budget is {budget}")


class ConfigSchemaError(BlackBoxCommError):
    """The experiment configuration failed schema validation."""

    exit_code = 2

    def __init__(self, diagnostics: List[Tuple[str, str]], source: Optional[str] = None):
        self.diagnostics = diagnostics
        self.source = source
        summary = "; ".join(f"{loc}: {msg}" for loc, msg in diagnostics)
        super().__init__(f"invalid config{f' {source}' if source else ''}: {summary}")
