"""Text-guided colored implicit 3D shape generation."""

__version__ = "0.1.0"
