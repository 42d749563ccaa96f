"""Training-free localized video style transfer."""
__version__ = "0.1.0"
