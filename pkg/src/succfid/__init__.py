"""Succinct dynamic rank/select dictionary built from compressed weighted treaps."""

from .config import RunConfig

__all__ = ["RunConfig"]
