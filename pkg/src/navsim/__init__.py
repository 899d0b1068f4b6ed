"""Slot-based simulator for video delivery across origin, CDN, edge and peer nodes."""

__version__ = "0.1.0"
