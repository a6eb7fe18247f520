"""cavesim: deterministic multi-agent subterranean exploration simulator."""

__version__ = "0.1.0"
