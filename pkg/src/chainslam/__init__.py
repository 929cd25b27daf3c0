"""Whole-body posture estimation and mapping for articulated chains
carrying distributed proximity sensors."""

__version__ = "0.1.0"
