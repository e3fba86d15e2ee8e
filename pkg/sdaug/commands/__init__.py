"""Subcommands exposed by the ``sdaug`` CLI; discovered by ``registry.discover_commands``."""
