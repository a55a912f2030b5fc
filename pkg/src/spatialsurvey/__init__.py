"""Two-stage spatially balanced sampling designs evaluated on a simulated epidemic."""

__version__ = "0.1.0"
