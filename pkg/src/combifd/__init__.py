"""Low-rank pattern decomposition under linear and combinatorial constraints."""

__version__ = "0.1.0"
