"""Real-time estimation of surface pressure from sparse strain measurements."""

__version__ = "0.1.0"
