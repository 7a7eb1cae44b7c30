"""Graph-convolutional WiFi RSSI fingerprint localization."""

__version__ = "0.1.0"
