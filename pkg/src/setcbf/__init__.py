"""Set-based control barrier functions and safety filters for linear systems."""

__version__ = "0.1.0"
