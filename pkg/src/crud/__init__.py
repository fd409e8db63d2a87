"""Persistence package: datasets, checkpoints and metric tables."""
