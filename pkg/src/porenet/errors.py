"""Exception hierarchy shared by every porenet module."""


class PorenetError(Exception):
    """Base class; the CLI turns these into a message and a nonzero exit."""


class ConfigurationError(PorenetError, ValueError):
    pass


class DomainError(PorenetError, ValueError):
    pass


class UnsupportedPrimitive(PorenetError, TypeError):
    def __init__(self, name):
        super().__init__(f"unsupported primitive for differentiation: {name!r}")
        self.primitive = name


class NumericalError(PorenetError, ArithmeticError):
    def __init__(self, message, node_index=None, name=None):
        super().__init__(message)
        self.node_index = node_index
        self.name = name


class CaseFormatError(PorenetError, ValueError):
    pass


class ValidationError(CaseFormatError):
    def __init__(self, message, point_index=None):
        super().__init__(message)
        self.point_index = point_index


class TrainingDiverged(NumericalError):
    def __init__(self, message, epoch, batch):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
