"""Cell-free massive MIMO downlink: deterministic equivalents, gradients and AP deployment."""

__version__ = "0.1.0"
