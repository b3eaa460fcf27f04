"""Adversarial attack implementations against perception and V2X messaging."""

from . import comm, perception  # noqa: F401
