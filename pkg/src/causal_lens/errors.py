"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class CausalLensError(Exception):
    exit_code = 1


class ConfigError(CausalLensError):
    exit_code = 2


class ModelError(CausalLensError):
    exit_code = 3


class DomainError(ModelError):
    """Chart point outside the model's chart box."""


class ModelDefinitionError(ModelError):
    pass


class IntegrationError(ModelError):
    """Numerical failure of the geodesic integrator."""


class EscapeError(IntegrationError):
    pass


class StiffnessError(IntegrationError):
    pass


class NonExitingError(IntegrationError):
    """No boundary crossing within the affine budget."""


class DataError(CausalLensError):
    exit_code = 4


class ClassificationError(DataError):
    pass


class ZeroVectorError(ClassificationError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataInconsistencyError(DataError):
    pass


class DomainTooThinError(DataError):
    pass


class ReconstructionError(CausalLensError):
    exit_code = 5


class NoApexError(ReconstructionError):
    """Riccati solution reached the boundary without blowing up."""


class ConjugatePointError(ReconstructionError):
    def __init__(self, message, parameter=None):
        self.parameter = parameter
        super().__init__(message)


class FiberDisagreementError(ReconstructionError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class HypothesisViolation(ReconstructionError):
    pass


class UnderdeterminedError(ReconstructionError):
    pass


class InconsistentFanError(ReconstructionError):
    pass


class CliqueBudgetError(ReconstructionError):
    pass


class IOFailure(CausalLensError):
    exit_code = 6
