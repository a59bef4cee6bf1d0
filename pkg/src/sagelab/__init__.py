"""Desk-scale dual-process agentic reasoning stack and reliability lab."""

__version__ = "0.1.0"
