"""Reference detector adapter for the warp harness wire protocol."""

__version__ = "0.1.0"
