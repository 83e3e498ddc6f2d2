"""H-infinity output-feedback synthesis for nested interconnections."""

__version__ = "0.1.0"
