class VtubesError(Exception):
    """Base class of all errors raised by vtubes"""
    exit_code = 1

    def __init__(self, msg):
        super().__init__(msg)
        self.msg = msg

class InternalError(VtubesError):
    """A bug in vtubes"""
    def __init__(self, ex):
        super().__init__(f'{type(ex).__qualname__}: {ex}')
        self.ex = ex

class UsageError(VtubesError):
    """Bad command-line usage or an invalid request"""
    exit_code = 1

class DataError(VtubesError):
    """Input data or a constructed value violates an invariant"""
    exit_code = 2

    def __init__(self, msg, path=None, line=None):
        if line is not None:
            msg = f'line {line}: {msg}'
        if path is not None:
            msg = f'{path}: {msg}'
        super().__init__(msg)
        self.path = path
        self.line = line

class GeometryError(DataError):
    """A point or match that cannot be projected or triangulated"""

class NumericalError(VtubesError):
    """Degenerate geometry, non-convergence or a non-PD covariance"""
    exit_code = 3

