"""Conversation emotion recognition with gated multimodal fusion and
visual anchor guidance, on a self-contained autodiff engine."""

__version__ = "0.1.0"
