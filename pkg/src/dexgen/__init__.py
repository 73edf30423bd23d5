"""Dexterous grasp synthesis, graspness annotation and pose diffusion on primitive scenes."""

__version__ = "0.1.0"
