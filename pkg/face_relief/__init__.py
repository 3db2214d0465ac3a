"""Face Relief - near-light photometric stereo for detailed face surfaces."""

__version__ = "1.0.0"
