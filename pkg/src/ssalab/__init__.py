"""Small-signal stability laboratory for the two-area benchmark with a DFIG wind farm."""

__version__ = "0.1.0"
