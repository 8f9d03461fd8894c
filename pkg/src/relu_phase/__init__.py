"""Phase diagram of two-layer ReLU networks at large width."""

__version__ = "0.1.0"
