"""Experiment orchestration: configuration, persistence, and the CLI."""

from . import commands, config, manifest, persist

__all__ = ["commands", "config", "manifest", "persist"]
