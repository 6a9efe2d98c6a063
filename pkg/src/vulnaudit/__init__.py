"""Layered vulnerability auditing: triage, bounded context, agents, verification and fusion."""

__version__ = "0.1.0"
