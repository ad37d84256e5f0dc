"""Thermodynamic diagnostics for layered neural networks viewed as septuples."""

__version__ = "0.1.0"
