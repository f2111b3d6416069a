"""Exception types shared across the package."""


class GameConfigError(ValueError):
    """Raised when a game, scenario, or config is structurally invalid."""


class StageIndexError(IndexError):
    """Raised when a stage index falls outside the declared horizon."""


class NonConvergence(RuntimeError):
    """Raised when an iterative solver stops without meeting its tolerance.

    Carries the last iterate and enough diagnostics to decide whether a
    retry (smaller step, more regularization) is worth attempting.
    """

    def __init__(self, message, iterations=None, residual=None, last_iterate=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.last_iterate = last_iterate


class SensitivityFailure(RuntimeError):
    """Raised when the reduced derivative system cannot be solved at all."""


class IngestionError(ValueError):
    """Raised on malformed external data files; includes row/column context."""

    def __init__(self, message, path=None, row=None, column=None):
        detail = message
        where = ", ".join(
            s for s in (
                f"file {path}" if path else "",
                f"row {row}" if row is not None else "",
                f"column {column}" if column is not None else "",
            ) if s
        )
        if where:
            detail = f"{message} ({where})"
        super().__init__(detail)
        self.path = path
        self.row = row
        self.column = column
