"""Consistency distillation of point-cloud-conditioned diffusion policies on toy 2D tasks."""

__version__ = "0.1.0"
