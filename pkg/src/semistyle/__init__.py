"""Text style transfer from non-parallel corpora: pseudo-pair bootstrapping plus
policy-gradient refinement with attention-weighted stepwise rewards."""

__version__ = "0.1.0"
