"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class MLVMSError(Exception):
    exit_code = 1


class ConfigError(MLVMSError, ValueError):
    exit_code = 2


class MeshError(MLVMSError, ValueError):
    exit_code = 3


class SolverError(MLVMSError, RuntimeError):
    exit_code = 4


class SingularSystemError(SolverError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(SolverError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class StagnationError(ConvergenceError):
    pass


class OutputError(MLVMSError, OSError):
    exit_code = 5
