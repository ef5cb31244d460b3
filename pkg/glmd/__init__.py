"""Communication-efficient distributed maximum-likelihood estimation for GLMs."""
__version__ = "0.1.0"
