"""Exception hierarchy shared by all modules."""


class MemDarcyError(Exception):
    """Base class for all errors raised by memdarcy."""


# geometry
class GeometryError(MemDarcyError):
    pass


class MarginViolation(GeometryError):
    pass


class DegenerateInclusion(GeometryError):
    pass


class MeshQualityFailure(GeometryError):
    pass


class SeamMismatch(GeometryError):
    pass


# kinematics
class KinematicsError(MemDarcyError):
    pass


class OutOfDomain(KinematicsError):
    pass


class SingularMap(KinematicsError):
    pass


class NonMonotoneLaw(KinematicsError):
    """The radial blend loses invertibility for the requested radius law."""


# finite elements / solvers
class SolverError(MemDarcyError):
    pass


class SolverBreakdown(SolverError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class AssemblyOverflow(SolverError):
    pass


class EigenFailure(SolverError):
    pass


class ResourceGuard(MemDarcyError):
    pass


# cell problems / kernels
class IncompatibleInitialData(MemDarcyError):
    pass


class CacheCorruption(MemDarcyError):
    pass


class KernelIncomplete(MemDarcyError):
    pass


# configuration
class ParseError(MemDarcyError):
    def __init__(self, message, line=None, column=None):
        loc = "" if line is None else f" (line {line}, column {column})"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(MemDarcyError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
