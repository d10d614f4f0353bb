"""Traffic simulation with vehicles as SPH particles on a segmented road network."""

__version__ = "0.1.0"
