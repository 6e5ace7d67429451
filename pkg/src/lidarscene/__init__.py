"""Layout-conditioned LiDAR range-image simulation, generation and
evaluation toolkit."""

__version__ = "0.1.0"
