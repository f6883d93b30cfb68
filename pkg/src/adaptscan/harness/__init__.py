"""Experiment configuration, orchestration and the command-line entry point."""
