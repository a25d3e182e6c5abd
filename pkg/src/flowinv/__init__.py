"""flowinv: rectified-flow inversion and invariance-controlled editing lab."""

__version__ = "0.1.0"
