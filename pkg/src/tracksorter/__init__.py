"""TrackSorter: transformer-based sorting of detector hits into track candidates."""

__version__ = "0.1.0"
