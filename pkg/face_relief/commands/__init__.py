"""Subcommand implementations; each takes ``(args, config)`` and returns an exit code."""
