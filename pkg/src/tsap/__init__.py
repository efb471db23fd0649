"""Self-tuning self-supervised time-series anomaly detection."""

__version__ = "0.1.0"
