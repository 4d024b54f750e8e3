"""Termination prover for while programs: ranking functions and invariants synthesised together."""

__version__ = "0.1.0"
