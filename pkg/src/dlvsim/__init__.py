"""dlvsim: generative simulators for discrete-local-volatility panels."""

__version__ = "0.1.0"
