"""Fracture-aware localized orthogonal decomposition on triangle meshes."""

__version__ = "0.1.0"
