"""Distance between dissimilar robot embodiments, and imitation built on it."""
__version__ = "0.1.0"
