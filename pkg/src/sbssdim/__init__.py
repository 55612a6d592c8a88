"""Dimension tests for spatial blind source separation."""
