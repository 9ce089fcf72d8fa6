"""Training-data influence estimation, target identification and sanitization."""

from ._inffor import *  # noqa: F401,F403
