"""
Exception hierarchy for blocktune.

Every error carries a stable ``code`` used as the ``error_code`` when it is
reported through ``logger_config.log_error``.
"""

from typing import Optional


class BlockTuneError(Exception):
    """Base class for all blocktune errors."""

    code = "BLOCKTUNE_ERROR"


class ModelError(BlockTuneError):
    """Invalid model, network or configuration. The CLI exits with 1."""

    code = "MODEL_ERROR"


class SolverError(BlockTuneError):
    """Numerical failure while integrating or tuning. The CLI exits with 2."""

    code = "SOLVER_ERROR"


# symcore


class UnresolvableDerivative(ModelError):
    code = "UNRESOLVABLE_DERIVATIVE"


class UnboundSymbol(ModelError):
    code = "UNBOUND_SYMBOL"


class DomainError(SolverError):
    code = "DOMAIN_ERROR"


class ParseError(ModelError):
    code = "PARSE_ERROR"


# blocksys


class InvalidEquation(ModelError):
    code = "INVALID_EQUATION"


class DuplicateDefinition(ModelError):
    code = "DUPLICATE_DEFINITION"


class UndeclaredInput(ModelError):
    code = "UNDECLARED_INPUT"


class OutputWithoutEquation(ModelError):
    code = "OUTPUT_WITHOUT_EQUATION"


class DanglingEndpoint(ModelError):
    code = "DANGLING_ENDPOINT"


class DoublyDrivenInput(ModelError):
    code = "DOUBLY_DRIVEN_INPUT"


class NameCollision(ModelError):
    code = "NAME_COLLISION"


class CyclicAlgebraicDependency(ModelError):
    code = "CYCLIC_ALGEBRAIC_DEPENDENCY"


# netdyn


class InterfaceMismatch(ModelError):
    code = "INTERFACE_MISMATCH"


class IndexOutOfRange(ModelError):
    code = "INDEX_OUT_OF_RANGE"


class InvalidTopology(ModelError):
    code = "INVALID_TOPOLOGY"


class UnknownState(ModelError):
    code = "UNKNOWN_STATE"


# odesolve


class NewtonDivergence(SolverError):
    code = "NEWTON_DIVERGENCE"


class StepSizeUnderflow(SolverError):
    code = "STEP_SIZE_UNDERFLOW"


class InconsistentInitialCondition(SolverError):
    code = "INCONSISTENT_INITIAL_CONDITION"


class OutOfRange(ModelError):
    code = "OUT_OF_RANGE"


# powerlib / probetune


class InvalidParameter(ModelError):
    code = "INVALID_PARAMETER"


class DimensionMismatch(ModelError):
    code = "DIMENSION_MISMATCH"


class IntegrationFailure(SolverError):
    code = "INTEGRATION_FAILURE"

    def __init__(self, message: str, scenario: Optional[int] = None):
        super().__init__(message)
        self.scenario = scenario


class NonFiniteLoss(SolverError):
    code = "NON_FINITE_LOSS"

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration


# configuration


class ConfigError(ModelError):
    """Configuration validation failure naming the offending field."""

    code = "CONFIG_ERROR"

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
