"""Error taxonomy shared by the library, the service and the CLI.

Every domain error carries a ``category`` that the service maps to a
structured HTTP error body and the CLI maps to a process exit code
(input -> 2, format -> 3, infeasible -> 4).
"""


class PatchBankError(Exception):
    """Base class for all domain errors."""

    category = "input"


class InputError(PatchBankError):
    """Invalid argument, missing file, shape mismatch, bad precondition."""

    category = "input"


class FormatError(PatchBankError):
    """A file on disk does not conform to its declared binary/text format."""

    category = "format"


class InfeasibleError(PatchBankError):
    """The request is well-formed but cannot be satisfied by the data."""

    category = "infeasible"


EXIT_CODES = {"input": 2, "format": 3, "infeasible": 4}
