class VolsegError(Exception):
    pass


class NiftiFormatError(VolsegError, ValueError):
    pass


class UnsupportedDatatypeError(NiftiFormatError):
    def __init__(self, code):
        super().__init__(f'Unsupported NIfTI datatype code {code}')
        self.code = code


class TruncatedDataError(NiftiFormatError):
    def __init__(self, expected, actual):
        super().__init__(f'Truncated data section: expected {expected} bytes, '
                         f'got {actual}')
        self.expected = expected
        self.actual = actual


class PrecisionError(VolsegError, ValueError):
    pass


class GeometryError(VolsegError, ValueError):
    pass


class EmptyMaskError(VolsegError, ValueError):
    pass


class EmptyBodyError(EmptyMaskError, ZeroDivisionError):
    pass


class DegenerateHistogramError(VolsegError, ValueError):
    pass


class SpecError(VolsegError, ValueError):
    pass


class EmptyCohortError(VolsegError, ValueError):
    pass


class DegenerateVarianceError(VolsegError, ArithmeticError):
    pass


class StatsInputError(VolsegError, ValueError):
    pass


class DomainError(VolsegError, ValueError):
    pass
