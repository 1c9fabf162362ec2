"""Operational surface: HTTP API, command line, and performance probes."""
