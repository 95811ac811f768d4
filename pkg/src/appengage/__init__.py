"""Next-app and engagement-level prediction from mobile app-usage logs."""

__version__ = "0.1.0"
