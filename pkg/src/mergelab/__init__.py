"""Mixed-traffic merging lab: learned driver prediction + receding-horizon control."""

__version__ = "0.1.0"
