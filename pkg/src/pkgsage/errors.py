"""Exception hierarchy shared by every module of the toolkit."""


class PkgSageError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedVersion(PkgSageError):
    pass


class ParseError(PkgSageError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateAdmission(PkgSageError):
    pass


class InvalidWindow(PkgSageError):
    pass


class SampleTooLarge(PkgSageError):
    pass


class InvalidNode(PkgSageError):
    pass


class ShapeError(PkgSageError):
    pass


class NumericError(PkgSageError):
    pass


class DegenerateSplit(PkgSageError):
    pass


class EmptyEvaluation(PkgSageError):
    pass


class InvalidConditionList(PkgSageError):
    pass


class UndefinedDelta(PkgSageError):
    pass


class InvalidInput(PkgSageError):
    pass


class WriteError(PkgSageError):
    pass


class OracleTooLarge(PkgSageError):
    pass
