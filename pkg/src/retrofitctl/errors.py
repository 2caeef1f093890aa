"""Exception hierarchy shared by all modules."""


class RetrofitError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(RetrofitError, ValueError):
    pass


class IllPosedLoop(RetrofitError):
    """The instantaneous (feedthrough) part of a feedback loop is singular."""


class EvaluationAtPole(RetrofitError, ArithmeticError):
    pass


class SamplingError(RetrofitError):
    pass


class SynthesisError(RetrofitError):
    """A stabilizing gain, factorization or internal controller could not be built."""


class AssumptionViolation(RetrofitError):
    """The plant does not admit the relative-degree structure needed by the rectifier."""


class CoordinateError(RetrofitError):
    pass


class NumericalDegeneracy(RetrofitError):
    pass


class SimulationDivergence(RetrofitError):
    def __init__(self, message, time):
        super().__init__(message)
        self.time = time
