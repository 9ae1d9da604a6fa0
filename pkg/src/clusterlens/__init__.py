"""Streaming analytics and reservation-policy simulation for cluster
scheduler traces in the Google clusterdata layout."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    EventKind,
    PriorityTier,
    TaskEvent,
    TaskKey,
    TaskState,
    TerminalClassification,
    legal_transition,
    tier_of,
)
