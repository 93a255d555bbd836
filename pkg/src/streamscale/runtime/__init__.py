"""Channels, graph construction, virtual clock, execution engine and checkpoints."""
