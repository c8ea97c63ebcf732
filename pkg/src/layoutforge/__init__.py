"""layoutforge: 3D scene layout reconstruction from parsed images."""

__version__ = "0.1.0"
