"""Gaze estimation toolkit."""
