"""Sparse and stable learning of sigmoidal recurrent networks."""
__version__ = "0.1.0"
