"""Numerical Ważewski method: egress classification, witness bisection and stability probes."""

__version__ = "0.1.0"
