"""Workloads, operators, metrics, equivalence checks and the command line."""
