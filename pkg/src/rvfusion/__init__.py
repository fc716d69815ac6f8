"""Camera-LiDAR fusion in the LiDAR range view."""
__version__ = "0.1.0"
