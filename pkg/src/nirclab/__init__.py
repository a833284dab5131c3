"""nirclab: a CPU laboratory for two-level Monte Carlo light transport
with online-trained neural radiance caches."""

__version__ = "0.1.0"
