"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class DhinfError(Exception):
    exit_code = 3


class InputError(DhinfError, ValueError):
    exit_code = 2


class NumericalError(DhinfError):
    exit_code = 3


class CriticalSpectrumError(NumericalError):
    """Hamiltonian has eigenvalues on (or too close to) the imaginary axis."""


class ImpulsivePairError(DhinfError):
    """The pencil (E, A) has impulsive modes; reduction is impossible."""

    exit_code = 2


class NotStableError(DhinfError):
    exit_code = 1


class InfeasibleError(DhinfError):
    exit_code = 1


class UndecidedError(DhinfError):
    """Solver or heuristic could neither certify nor refute feasibility."""

    exit_code = 1


class DivergedError(NumericalError):
    pass
