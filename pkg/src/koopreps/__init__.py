"""Koopman-operator surrogates of neural-network representation dynamics."""
from __future__ import annotations

__version__ = "0.1.0"
