"""Balanced-representation flow matching for potential-outcome distributions."""

__version__ = "0.1.0"
