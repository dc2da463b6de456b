"""Shared exception base for the tailcast package."""
from __future__ import annotations


class TailcastError(Exception):
    """Base class for all errors raised by tailcast itself.

    Anything not subclassing this (ValueError, OSError, ...) is a plain
    usage or environment problem, not a modeling outcome.
    """
