"""Desk-scale aquaculture telemetry testbed.

Radio link budget math, a deterministic farm/node simulator, a
store-and-forward gateway relay, and an HTTP ingestion service, wired
together behind one CLI.
"""

__version__ = "0.1.0"
