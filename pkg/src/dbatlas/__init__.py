"""Decision-boundary atlas toolkit.

Small width-parameterized classifier families trained from scratch in numpy,
plus the instruments to study their decision boundaries: plane-through-triplet
rasters, reproducibility / fragmentation / margin scores, a concentration-bound
validator, and desk-scale double-descent sweeps.
"""

__version__ = "0.1.0"
