"""Pointer-generator headline generation trained with a repetition-normalized adversarial reward."""
__version__ = "0.1.0"
