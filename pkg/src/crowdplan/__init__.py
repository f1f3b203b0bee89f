"""Line planning under crowding by cut-and-column generation."""
__version__ = "0.1.0"
