"""Multi-UAV air-combat simulator with a hierarchical leader-follower MAPPO trainer."""

__version__ = "0.1.0"
