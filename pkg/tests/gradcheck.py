from ordergan.gradcheck import (  # noqa: F401
    BINARY,
    UNARY,
    RandomGraph,
    central_difference,
    graph_gradients,
    graph_value,
    relative_error,
)
