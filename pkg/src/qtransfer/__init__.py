"""Transferability of adversarial examples among quantized networks."""

__version__ = "0.1.0"
