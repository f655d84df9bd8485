"""Additive isotone regression."""
