"""Sparse 3D imaging for array SAR with denoiser-based priors."""

__version__ = "0.1.0"
