"""Planning joint verification-correction strategies over Bayesian networks."""

__version__ = "0.1.0"
