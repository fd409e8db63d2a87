"""Simulated wireless resource-management environments."""
