"""
vamce: semi-supervised speech enhancement with a VAE speech model and
an MCEM-estimated NMF noise model, plus an IS-NMF baseline.
"""

__version__ = "0.1.0"
