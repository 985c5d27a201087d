"""QAKT knowledge-tracing engine."""
