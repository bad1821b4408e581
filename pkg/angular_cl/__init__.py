"""Continual learning with angular semantic-drift node separation."""

__version__ = "0.3.0"
