"""Single-slice-to-3D reconstruction benchmark harness."""

__version__ = "0.1.0"
