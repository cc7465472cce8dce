"""Gaussian-process curve fitting from arbitrary emissions, and dynamic IRT."""

__version__ = "0.1.0"

#: Version of the on-disk CSV/JSON formats written by the command-line tool.
FORMAT_VERSION = "1"
