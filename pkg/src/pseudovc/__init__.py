"""One-shot voice conversion training with pseudo paired data and speaker sampling."""

__version__ = "0.1.0"
