"""eviction-triage: point-in-time risk pipeline for prioritizing rental assistance."""

__version__ = "0.1.0"
