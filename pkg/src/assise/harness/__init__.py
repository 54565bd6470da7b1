"""Scenarios, checkers, workloads and measurement sweeps."""
