"""d2dce-lab: conditioning losses and training harnesses for classifier-based cGANs."""
__version__ = "1.0.0"
