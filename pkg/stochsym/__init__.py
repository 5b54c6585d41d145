"""Top-level package for stochsym."""

__version__: str = "0.1.0"
