"""Data ingestion, corruption tasks and config-driven experiments."""
