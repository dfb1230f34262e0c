"""Offline rendering of solver CSV artifacts into figures."""
