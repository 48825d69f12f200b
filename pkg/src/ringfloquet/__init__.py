"""Spectral and dynamical analysis of a periodically driven ring with a delta-prime interaction.

Submodules are imported on demand; the command line sets thread limits before
any numerical library is loaded.
"""

__version__ = "0.1.0"
