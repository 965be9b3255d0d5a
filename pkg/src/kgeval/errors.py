"""Exception hierarchy shared by all kgeval modules."""


class KGEvalError(Exception):
    """Base class for every error raised by kgeval."""


class ParseError(KGEvalError, ValueError):
    """Malformed triples or rules input."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None and line is not None:
            where = f"{source}:{line}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class GoldIncomplete(KGEvalError, ValueError):
    """An operation needed gold labels for every BET and some were missing."""


class BudgetExhausted(KGEvalError):
    """Not enough residual budget to pay for another crowd answer."""


class SelectionExhausted(KGEvalError):
    """A control strategy was asked for a BET but none remain."""
