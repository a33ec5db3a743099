"""Lane-keeping distraction detection with TPE-tuned gradient-boosted trees."""

__version__ = "0.1.0"
