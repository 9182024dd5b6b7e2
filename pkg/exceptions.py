"""Chybové triedy laboratória; každá nesie exit kód pre CLI."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class LabError(Exception):
    exit_code = EXIT_USAGE


class ConfigError(LabError, ValueError):
    """Neplatná konfigurácia alebo parameter."""


class DimensionError(LabError, ValueError):
    """Tvary tenzorov do seba nezapadajú."""


class ContractError(LabError, ValueError):
    """Porušená vstupná podmienka operácie."""


class LengthError(LabError, ValueError):
    pass


class TokenIndexError(LabError, IndexError):
    exit_code = EXIT_DATA


class DataError(LabError):
    exit_code = EXIT_DATA


class CorpusFormatError(DataError):
    """Chybný riadok v JSONL súbore, nesie číslo riadku a názov poľa."""

    def __init__(self, message: str, line: int, field: str | None = None):
        location = f"line {line}" if field is None else f"line {line}, field '{field}'"
        super().__init__(f"{location}: {message}")
        self.line = line
        self.field = field


class CheckpointError(DataError):
    pass


class NumericError(LabError, ArithmeticError):
    exit_code = EXIT_NUMERIC


class CompletionError(LabError):
    exit_code = EXIT_DATA
    kind = "error"


class CompletionTimeout(CompletionError):
    kind = "timeout"


class CompletionRefusal(CompletionError):
    kind = "refusal"


class MalformedCompletion(CompletionError):
    kind = "malformed"
