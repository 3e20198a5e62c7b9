"""Diffusion-based molecular communication links: OOMoSK, MoSK and CSK.

Closed-form symbol error rate and capacity, checked against a Monte Carlo
particle oracle.
"""

__version__ = "0.1.0"
