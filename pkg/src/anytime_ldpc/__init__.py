"""Anytime-reliable LDPC convolutional coding for networked control."""

__version__ = "0.1.0"
