"""Molecular communication with magnetic nanoparticles in a flow channel."""

__version__ = "0.1.0"
