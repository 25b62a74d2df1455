"""Quantum-trajectory simulation of catching and reversing a quantum jump."""
from __future__ import annotations

__version__ = "0.1.0"
