"""Galaxy vs. nebula/star-cluster classification from raw HST-style frames."""

__version__ = "0.1.0"
