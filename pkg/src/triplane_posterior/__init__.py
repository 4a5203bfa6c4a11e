"""
triplane-posterior - Probabilistic 3D reconstruction with tri-plane latents and a diffusion prior.

PURPOSE: Main package entry point
"""

__version__ = "0.1.0"
