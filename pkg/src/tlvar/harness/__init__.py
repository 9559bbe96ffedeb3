"""Experiment harness: data ingestion, metrics, experiment runners and the CLI."""
