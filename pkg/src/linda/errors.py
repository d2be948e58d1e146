"""Exception hierarchy shared by every stage of the pipeline."""


class LindaError(Exception):
    """Base class for all package errors."""


class ParseError(LindaError):
    """An input file could not be parsed."""


class ValidationError(LindaError):
    """Inputs are well-formed but violate a documented contract."""


class DesignError(ValidationError):
    """The design matrix is rank deficient or otherwise unusable."""


class NumericError(LindaError):
    """A numerical routine could not produce a trustworthy answer."""


class IllConditionedDesign(NumericError):
    """Design matrix condition number exceeds the accepted limit."""
