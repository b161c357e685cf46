"""Entropy coding and the on-disk layer container."""
