"""Exception types shared across the engine and the algorithms."""


class GraphError(ValueError):
    """Invalid graph construction or query (unknown vertex, self-loop, ...)."""


class FrozenGraphError(GraphError):
    """Structural mutation attempted while the graph is frozen."""


class ContractViolation(RuntimeError):
    """A caller broke an API contract (double release, re-entrant scope, ...)."""


class UnsupportedOperation(RuntimeError):
    pass


class DegeneratePotentialError(ArithmeticError):
    """A message or conditional distribution normalised to zero."""


class DivergenceError(ArithmeticError):
    """An iterative solver left its region of convergence."""


class UpdateFunctionError(RuntimeError):
    """Raised by the engine when an update function fails.

    The failing vertex and function id are kept so callers can report them.
    """

    def __init__(self, vertex, function_id, cause):
        self.vertex = vertex
        self.function_id = function_id
        self.cause = cause
        super().__init__(f"update function {function_id} failed on vertex {vertex}: {cause!r}")
