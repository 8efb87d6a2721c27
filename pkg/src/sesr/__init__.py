"""Recursive squeeze-and-excitation networks for single-image super-resolution."""
