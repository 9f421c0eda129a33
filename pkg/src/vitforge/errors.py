"""Exception hierarchy. The CLI maps each family to an exit code."""


class VitForgeError(Exception):
    exit_code = 1


class ConfigError(VitForgeError):
    exit_code = 1


class DimensionError(VitForgeError, ValueError):
    exit_code = 1


class StateError(VitForgeError, RuntimeError):
    exit_code = 1


class DecodeError(VitForgeError):
    exit_code = 2

    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"cannot decode image {self.path}: {reason}")


class FormatError(VitForgeError):
    exit_code = 2


class LabelError(VitForgeError, ValueError):
    exit_code = 2


class UndefinedMetricError(VitForgeError, ValueError):
    exit_code = 2


class NumericFault(VitForgeError, ArithmeticError):
    exit_code = 3
