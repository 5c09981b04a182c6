"""Tunable inductor bridge circuit model and Walsh-code multiplexing simulator."""

__version__ = "0.1.0"
