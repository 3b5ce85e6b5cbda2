"""Optimal switching with random lag and component failure."""
