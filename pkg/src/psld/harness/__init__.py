"""Experiment harness: datasets, training loop, metrics, configs, CLI."""
