"""Model-selection reinforcement learning laboratory."""

from ._accel import USE_NUMBA, backend_name

__version__ = "0.1.0"

__all__ = ["USE_NUMBA", "backend_name", "__version__"]
