"""Fixed-angle inverse scattering on a known Riemannian background."""

__version__ = "0.1.0"
